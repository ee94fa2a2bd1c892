use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{CallSummary, ImageRef};
use crate::optimizer::OptimizationOutcome;
use crate::reflection::{Answer, ReflectionReport};
use crate::scene_graph::QuestionId;

pub const RECORD_FILE: &str = "record.json";
pub const GRAPH_FILE: &str = "graph.json";
pub const IMAGES_DIR: &str = "images";
pub const TRANSCRIPTS_DIR: &str = "transcripts";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecordError {
    #[error("i/o failure on {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid record at `{path}`: {message}")]
    SchemaViolation { path: String, message: String },
}

impl RecordError {
    pub(crate) fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        RecordError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptEntry {
    pub stage: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub label: String,
    pub image: ImageRef,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub millis: u64,
}

/// Broad failure class, used for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureClass {
    Backend,
    StageExhausted,
    Precondition,
    Io,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed {
        stage: String,
        class: FailureClass,
        error: String,
    },
}

/// Answers gathered before the VQA model failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortedEvaluation {
    pub image: String,
    pub question: QuestionId,
    pub answers: std::collections::BTreeMap<QuestionId, Answer>,
}

/// Everything one pipeline run produced.
///
/// In memory, local image paths are absolute. On disk they are relative to
/// the run directory and are rebased by [`load_record`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub run_id: String,
    /// Milliseconds since the Unix epoch.
    pub started_at: u64,
    pub prompt_history: Vec<PromptEntry>,
    pub image_refs: Vec<ImageEntry>,
    pub reports: Vec<ReflectionReport>,
    /// One per optimization round.
    pub outcomes: Vec<OptimizationOutcome>,
    pub backend_journal: Vec<CallSummary>,
    pub timings: Vec<Timing>,
    pub status: RunStatus,
    /// The last report found nothing missing.
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted_evaluation: Option<AbortedEvaluation>,
    #[serde(skip)]
    pub run_dir: PathBuf,
}

impl RunRecord {
    pub fn input_prompt(&self) -> &str {
        &self.prompt_history[0].prompt
    }

    /// The last optimization, if any ran.
    pub fn outcome(&self) -> Option<&OptimizationOutcome> {
        self.outcomes.last()
    }

    /// Prompt behind the last generated image.
    pub fn final_prompt(&self) -> &str {
        self.outcome()
            .map(|o| o.decorated_prompt.as_str())
            .unwrap_or_else(|| self.input_prompt())
    }

    pub fn initial_report(&self) -> Option<&ReflectionReport> {
        self.reports.first()
    }

    pub fn final_report(&self) -> Option<&ReflectionReport> {
        self.reports.last()
    }

    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    /// Copy with run-specific noise removed: id, start time, durations,
    /// latencies and the run directory. Two runs of the same input over
    /// scripted backends normalize to equal values.
    pub fn normalized(&self) -> RunRecord {
        let mut r = self.relative();
        r.run_id.clear();
        r.started_at = 0;
        r.run_dir = PathBuf::new();
        for t in &mut r.timings {
            t.millis = 0;
        }
        for c in &mut r.backend_journal {
            c.latency_ms = 0;
        }
        r
    }

    fn relative(&self) -> RunRecord {
        self.rebase(|p| p.strip_prefix(&self.run_dir).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf()))
    }

    fn rebase(&self, f: impl Fn(&Path) -> PathBuf) -> RunRecord {
        let mut r = self.clone();
        for entry in &mut r.image_refs {
            entry.image = entry.image.map_path(&f);
        }
        r
    }
}

/// Serialized form: pretty JSON with a trailing newline, paths relative.
pub fn record_to_json(record: &RunRecord) -> String {
    let mut s = serde_json::to_string_pretty(&record.relative()).expect("records serialize");
    s.push('\n');
    s
}

pub fn record_from_json(text: &str, run_dir: &Path) -> Result<RunRecord, RecordError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let mut record: RunRecord = serde_path_to_error::deserialize(&mut de).map_err(|e| RecordError::SchemaViolation {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    if record.prompt_history.is_empty() {
        return Err(RecordError::SchemaViolation {
            path: "prompt_history".into(),
            message: "must start with the user prompt".into(),
        });
    }
    record = record.rebase(|p| if p.is_relative() { run_dir.join(p) } else { p.to_path_buf() });
    record.run_dir = run_dir.to_path_buf();
    Ok(record)
}

/// Writes `record` to `<dir>/<run id>/record.json` and returns that path.
/// Images stored outside the target run directory are copied into it.
pub fn persist_record(record: &RunRecord, dir: &Path) -> Result<PathBuf, RecordError> {
    let run_dir = dir.join(&record.run_id);
    fs::create_dir_all(&run_dir).map_err(|e| RecordError::io(&run_dir, e))?;
    let mut record = record.clone();
    if record.run_dir != run_dir {
        for entry in &mut record.image_refs {
            let Some(src) = entry.image.path().map(Path::to_path_buf) else {
                continue;
            };
            let rel = src
                .strip_prefix(&record.run_dir)
                .map(Path::to_path_buf)
                .unwrap_or_else(|_| Path::new(IMAGES_DIR).join(src.file_name().unwrap_or_default()));
            let dest = run_dir.join(&rel);
            if let Some(parent) = dest.parent() {
                fs::create_dir_all(parent).map_err(|e| RecordError::io(parent, e))?;
            }
            fs::copy(&src, &dest).map_err(|e| RecordError::io(&src, e))?;
            entry.image = entry.image.map_path(|_| dest.clone());
        }
        record.run_dir = run_dir.clone();
    }
    let path = run_dir.join(RECORD_FILE);
    fs::write(&path, record_to_json(&record)).map_err(|e| RecordError::io(&path, e))?;
    Ok(path)
}

/// Reads a record written by [`persist_record`]. `path` may be the record
/// file or its run directory.
pub fn load_record(path: &Path) -> Result<RunRecord, RecordError> {
    let file = if path.is_dir() { path.join(RECORD_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(|e| RecordError::io(&file, e))?;
    let run_dir = file.parent().unwrap_or(Path::new("."));
    record_from_json(&text, run_dir)
}

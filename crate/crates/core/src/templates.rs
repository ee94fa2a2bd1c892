//! Few-shot prompt templates for every text-model stage.
//!
//! A template set is a directory with one subdirectory per stage:
//!
//! ```text
//! tuples/        preamble.txt  examples/001.input.txt  examples/001.output.txt ...
//! questions/
//! dependencies/
//! expansion/
//! regeneration/
//! decoration/
//! ```
//!
//! Exemplars are loaded in ascending file-name order. A bundled set is
//! compiled into the crate; [`TemplateSet::overlay_dir`] replaces individual
//! stages from a directory on disk.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use include_dir::{include_dir, Dir};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Exemplar, ModelBackend, TextGenRequest};
use crate::scene_graph::GraphError;

static BUNDLED: Dir<'_> = include_dir!("$CARGO_MANIFEST_DIR/templates");

/// Text-model stages, in pipeline order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Tuples,
    Questions,
    Dependencies,
    Expansion,
    Regeneration,
    Decoration,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Tuples,
        Stage::Questions,
        Stage::Dependencies,
        Stage::Expansion,
        Stage::Regeneration,
        Stage::Decoration,
    ];

    /// Directory name and request label.
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Tuples => "tuples",
            Stage::Questions => "questions",
            Stage::Dependencies => "dependencies",
            Stage::Expansion => "expansion",
            Stage::Regeneration => "regeneration",
            Stage::Decoration => "decoration",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template stage `{0}` is not loaded")]
    MissingStage(Stage),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("exemplar `{0}` has no matching input/output file")]
    UnpairedExemplar(String),
    #[error("stage `{0}` has an empty preamble")]
    EmptyPreamble(Stage),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageTemplate {
    pub preamble: String,
    pub exemplars: Vec<Exemplar>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TemplateSet {
    stages: BTreeMap<Stage, StageTemplate>,
}

/// Read access to a template tree, so the bundled and on-disk sets share the loader.
trait Source {
    fn read(&self, rel: &str) -> Result<Option<String>, TemplateError>;
    fn list(&self, rel: &str) -> Result<Vec<String>, TemplateError>;
}

struct Bundled;

impl Source for Bundled {
    fn read(&self, rel: &str) -> Result<Option<String>, TemplateError> {
        Ok(BUNDLED
            .get_file(rel)
            .and_then(|f| f.contents_utf8())
            .map(str::to_string))
    }

    fn list(&self, rel: &str) -> Result<Vec<String>, TemplateError> {
        Ok(BUNDLED
            .get_dir(rel)
            .map(|d| {
                d.files()
                    .filter_map(|f| f.path().file_name()?.to_str().map(str::to_string))
                    .collect()
            })
            .unwrap_or_default())
    }
}

struct OnDisk<'a>(&'a Path);

impl Source for OnDisk<'_> {
    fn read(&self, rel: &str) -> Result<Option<String>, TemplateError> {
        let path = self.0.join(rel);
        if !path.exists() {
            return Ok(None);
        }
        fs::read_to_string(&path).map(Some).map_err(|e| TemplateError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    fn list(&self, rel: &str) -> Result<Vec<String>, TemplateError> {
        let path = self.0.join(rel);
        if !path.is_dir() {
            return Ok(Vec::new());
        }
        let entries = fs::read_dir(&path).map_err(|e| TemplateError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(entries
            .filter_map(|e| e.ok()?.file_name().into_string().ok())
            .collect())
    }
}

fn load_stage(source: &dyn Source, stage: Stage) -> Result<Option<StageTemplate>, TemplateError> {
    let Some(preamble) = source.read(&format!("{stage}/preamble.txt"))? else {
        return Ok(None);
    };
    let preamble = preamble.trim().to_string();
    if preamble.is_empty() {
        return Err(TemplateError::EmptyPreamble(stage));
    }
    let examples_dir = format!("{stage}/examples");
    let mut names = source.list(&examples_dir)?;
    names.sort();
    let mut exemplars = Vec::new();
    for name in &names {
        let Some(key) = name.strip_suffix(".input.txt") else {
            if name.ends_with(".output.txt") && !names.contains(&name.replace(".output.txt", ".input.txt")) {
                return Err(TemplateError::UnpairedExemplar(format!("{examples_dir}/{name}")));
            }
            continue;
        };
        let input = source.read(&format!("{examples_dir}/{name}"))?.unwrap_or_default();
        let output = source
            .read(&format!("{examples_dir}/{key}.output.txt"))?
            .ok_or_else(|| TemplateError::UnpairedExemplar(format!("{examples_dir}/{name}")))?;
        exemplars.push(Exemplar {
            input: input.trim_end().to_string(),
            output: output.trim_end().to_string(),
        });
    }
    Ok(Some(StageTemplate { preamble, exemplars }))
}

fn load(source: &dyn Source) -> Result<TemplateSet, TemplateError> {
    let mut stages = BTreeMap::new();
    for stage in Stage::ALL {
        if let Some(t) = load_stage(source, stage)? {
            stages.insert(stage, t);
        }
    }
    Ok(TemplateSet { stages })
}

impl TemplateSet {
    /// The templates compiled into this crate, covering all six stages.
    pub fn bundled() -> Self {
        load(&Bundled).expect("bundled templates are well-formed")
    }

    /// Loads whichever stages exist under `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        if !dir.is_dir() {
            return Err(TemplateError::Io {
                path: dir.display().to_string(),
                message: "not a directory".into(),
            });
        }
        load(&OnDisk(dir))
    }

    /// Replaces every stage present under `dir`, keeping the others.
    pub fn overlay_dir(mut self, dir: &Path) -> Result<Self, TemplateError> {
        let overrides = Self::load_dir(dir)?;
        self.stages.extend(overrides.stages);
        Ok(self)
    }

    pub fn stage(&self, stage: Stage) -> Result<&StageTemplate, TemplateError> {
        self.stages.get(&stage).ok_or(TemplateError::MissingStage(stage))
    }

    pub fn insert(&mut self, stage: Stage, template: StageTemplate) {
        self.stages.insert(stage, template);
    }

    pub fn stages(&self) -> impl Iterator<Item = Stage> + '_ {
        self.stages.keys().copied()
    }

    /// Builds the request for `stage`, labelled with the stage name.
    pub fn request(&self, stage: Stage, input: impl Into<String>) -> Result<TextGenRequest, TemplateError> {
        let t = self.stage(stage)?;
        Ok(TextGenRequest::new(stage.as_str(), t.preamble.clone(), input).with_exemplars(t.exemplars.clone()))
    }

    /// Like [`TemplateSet::request`], substituting `{name}` placeholders in the preamble.
    pub fn request_with(
        &self,
        stage: Stage,
        input: impl Into<String>,
        vars: &[(&str, &str)],
    ) -> Result<TextGenRequest, TemplateError> {
        let mut req = self.request(stage, input)?;
        for (name, value) in vars {
            req.preamble = req.preamble.replace(&format!("{{{name}}}"), value);
        }
        Ok(req)
    }
}

/// Why one stage attempt was rejected.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum StageFailure {
    #[error(transparent)]
    Grammar(#[from] GraphError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error("stage `{stage}` produced no valid output in {attempts} attempts; last error: {last}")]
    Exhausted {
        stage: Stage,
        attempts: usize,
        last: StageFailure,
    },
    #[error("stage `{stage}`: {source}")]
    Backend {
        stage: Stage,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Template(#[from] TemplateError),
}

impl StageError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            StageError::Exhausted { stage, .. } | StageError::Backend { stage, .. } => Some(*stage),
            StageError::Template(TemplateError::MissingStage(stage)) => Some(*stage),
            StageError::Template(_) => None,
        }
    }
}

/// Sends `req` until `accept` takes the output, at most `max_attempts` times.
///
/// Backend errors end the loop immediately; transport-level retries are the
/// backend's business. Returns the accepted value and the raw text it came from.
pub fn run_stage<T>(
    llm: &dyn ModelBackend,
    stage: Stage,
    req: &TextGenRequest,
    max_attempts: usize,
    mut accept: impl FnMut(&str) -> Result<T, StageFailure>,
) -> Result<(T, String), StageError> {
    let mut last = StageFailure::Invalid("no attempts made".into());
    for attempt in 1..=max_attempts {
        let raw = llm
            .complete(req)
            .map_err(|source| StageError::Backend { stage, source })?;
        match accept(&raw) {
            Ok(value) => return Ok((value, raw)),
            Err(failure) => {
                log::debug!("{stage} attempt {attempt}/{max_attempts} rejected: {failure}");
                last = failure;
            }
        }
    }
    Err(StageError::Exhausted {
        stage,
        attempts: max_attempts,
        last,
    })
}

//! End-to-end runs: generate, reflect, optimize, generate again.
//!
//! Each run lives in `<out>/<run id>/`:
//!
//! ```text
//! record.json        the RunRecord
//! graph.json         the question graph
//! images/round-<k>.<ext>
//! transcripts/calls.jsonl
//! ```

mod record;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use record::{
    load_record, persist_record, record_from_json, record_to_json, AbortedEvaluation, FailureClass, ImageEntry,
    PromptEntry, RecordError, RunRecord, RunStatus, Timing, GRAPH_FILE, IMAGES_DIR, RECORD_FILE, TRANSCRIPTS_DIR,
};

use crate::backends::{BackendError, CallJournal, ImageGenRequest, ImageRef, JournaledBackend, ModelBackend};
use crate::optimizer::{optimize, DecorationMode, KeywordClassTable, OptimizeError, OptimizerConfig};
use crate::reflection::{build_dsg, evaluate_image, ReflectionError, ReflectionReport};
use crate::scene_graph::{serialize_graph, SceneGraph};
use crate::templates::{StageError, TemplateSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Optimization rounds at most.
    pub rounds: usize,
    pub build_attempts: usize,
    pub stage_attempts: usize,
    pub seed: u64,
    pub decorate: bool,
    pub decoration_mode: DecorationMode,
    pub prompt_cap: usize,
    /// Score the image generated from the last optimized prompt.
    pub re_reflect_final: bool,
    pub parallelism: usize,
    pub width: u32,
    pub height: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            rounds: 1,
            build_attempts: 3,
            stage_attempts: 3,
            seed: 0,
            decorate: true,
            decoration_mode: DecorationMode::Append,
            prompt_cap: crate::optimizer::DEFAULT_PROMPT_CAP,
            re_reflect_final: true,
            parallelism: 1,
            width: 512,
            height: 512,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let positive = [
            ("rounds", self.rounds),
            ("build_attempts", self.build_attempts),
            ("stage_attempts", self.stage_attempts),
            ("parallelism", self.parallelism),
            ("prompt_cap", self.prompt_cap),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(PipelineError::Precondition(format!("{name} must be at least 1")));
        }
        if self.width == 0 || self.height == 0 {
            return Err(PipelineError::Precondition("image dimensions must be positive".into()));
        }
        Ok(())
    }

    fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            stage_attempts: self.stage_attempts,
            decorate: self.decorate,
            decoration_mode: self.decoration_mode,
            prompt_cap: self.prompt_cap,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid input: {0}")]
    Precondition(String),
    #[error(transparent)]
    Record(#[from] RecordError),
}

/// The model services a pipeline talks to.
#[derive(Clone)]
pub struct Backends {
    pub llm: Arc<dyn ModelBackend>,
    pub vqa: Arc<dyn ModelBackend>,
    pub t2i: Arc<dyn ModelBackend>,
    pub embed: Option<Arc<dyn ModelBackend>>,
}

/// Per-run views of the shared backends that log into the run's journal.
struct RunBackends {
    llm: JournaledBackend,
    vqa: JournaledBackend,
    t2i: JournaledBackend,
    journal: Arc<CallJournal>,
}

impl Backends {
    fn for_run(&self) -> RunBackends {
        let journal = Arc::new(CallJournal::new());
        RunBackends {
            llm: JournaledBackend::new(self.llm.clone(), "llm", journal.clone()),
            vqa: JournaledBackend::new(self.vqa.clone(), "vqa", journal.clone()),
            t2i: JournaledBackend::new(self.t2i.clone(), "t2i", journal.clone()),
            journal,
        }
    }
}

/// Counts and mean scores over a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub completed: usize,
    pub failed: usize,
    /// Mean score of the first report of completed runs.
    pub mean_initial_score: Option<f64>,
    /// Mean score of the last report of completed runs.
    pub mean_final_score: Option<f64>,
}

impl BatchSummary {
    pub fn of(records: &[RunRecord]) -> Self {
        let done: Vec<&RunRecord> = records.iter().filter(|r| r.is_completed()).collect();
        let mean = |pick: fn(&RunRecord) -> Option<&ReflectionReport>| {
            let scores: Vec<f64> = done.iter().filter_map(|r| pick(r)).map(|r| r.score()).collect();
            (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
        };
        Self {
            completed: done.len(),
            failed: records.len() - done.len(),
            mean_initial_score: mean(RunRecord::initial_report),
            mean_final_score: mean(RunRecord::final_report),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Optimize,
    ScoreOnly,
}

/// Why a run stopped early.
struct Failure {
    stage: String,
    class: FailureClass,
    error: String,
}

impl Failure {
    fn backend(stage: &str, e: &BackendError) -> Self {
        let class = match e {
            BackendError::Precondition(_) => FailureClass::Precondition,
            BackendError::Io(_) => FailureClass::Io,
            _ => FailureClass::Backend,
        };
        Self {
            stage: stage.into(),
            class,
            error: e.to_string(),
        }
    }

    fn stage_error(e: &StageError) -> Self {
        let stage = e.stage().map_or("templates", |s| s.as_str()).to_string();
        let class = match e {
            StageError::Exhausted { .. } => FailureClass::StageExhausted,
            StageError::Backend { .. } => FailureClass::Backend,
            StageError::Template(_) => FailureClass::Precondition,
        };
        Self {
            stage,
            class,
            error: e.to_string(),
        }
    }

    fn reflection(e: &ReflectionError) -> Self {
        match e {
            ReflectionError::Stage(s) => Self::stage_error(s),
            ReflectionError::EvaluationAborted { source, .. } => Self::backend("evaluate", source),
            ReflectionError::Precondition(m) => Self {
                stage: "evaluate".into(),
                class: FailureClass::Precondition,
                error: m.clone(),
            },
        }
    }

    fn optimize(e: &OptimizeError) -> Self {
        match e {
            OptimizeError::Stage(s) => Self::stage_error(s),
            OptimizeError::EmptyExpansion(_) => Self {
                stage: "expansion".into(),
                class: FailureClass::StageExhausted,
                error: e.to_string(),
            },
            OptimizeError::Precondition(m) => Self {
                stage: "optimize".into(),
                class: FailureClass::Precondition,
                error: m.clone(),
            },
        }
    }

    fn io(stage: &str, e: impl std::fmt::Display) -> Self {
        Self {
            stage: stage.into(),
            class: FailureClass::Io,
            error: e.to_string(),
        }
    }
}

pub struct Pipeline {
    backends: Backends,
    templates: TemplateSet,
    keywords: KeywordClassTable,
    config: PipelineConfig,
    out_dir: PathBuf,
}

impl Pipeline {
    pub fn new(backends: Backends, config: PipelineConfig, out_dir: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Self {
            backends,
            templates: TemplateSet::bundled(),
            keywords: KeywordClassTable::default(),
            config,
            out_dir: out_dir.into(),
        })
    }

    pub fn with_templates(mut self, templates: TemplateSet) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_keywords(mut self, keywords: KeywordClassTable) -> Self {
        self.keywords = keywords;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn backends(&self) -> &Backends {
        &self.backends
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    /// Optimizes `prompt` and persists the run. Failures land in the
    /// record's status, never in an `Err`.
    pub fn run_single(&self, prompt: &str) -> RunRecord {
        self.run(prompt, None, Mode::Optimize)
    }

    /// Like [`Pipeline::run_single`], reusing an existing graph instead of
    /// building one.
    pub fn run_with_graph(&self, prompt: &str, graph: Option<&SceneGraph>) -> RunRecord {
        self.run(prompt, graph, Mode::Optimize)
    }

    /// Generates one image from `prompt` and scores it, without optimizing.
    pub fn score_prompt(&self, prompt: &str, graph: Option<&SceneGraph>) -> RunRecord {
        self.run(prompt, graph, Mode::ScoreOnly)
    }

    /// Runs every prompt with up to `parallelism` runs at a time. Records come
    /// back in input order.
    pub fn run_batch(&self, prompts: &[String]) -> Result<(Vec<RunRecord>, BatchSummary), PipelineError> {
        let jobs: Vec<(&str, Option<&SceneGraph>)> = prompts.iter().map(|p| (p.as_str(), None)).collect();
        let records = self.run_jobs(&jobs, Mode::Optimize)?;
        let summary = BatchSummary::of(&records);
        log::info!(
            "batch finished: {} completed, {} failed",
            summary.completed,
            summary.failed
        );
        Ok((records, summary))
    }

    /// Batch entry point for callers with pre-built graphs.
    pub fn run_jobs_with_graphs(
        &self,
        jobs: &[(&str, Option<&SceneGraph>)],
        optimize: bool,
    ) -> Result<Vec<RunRecord>, PipelineError> {
        self.run_jobs(jobs, if optimize { Mode::Optimize } else { Mode::ScoreOnly })
    }

    fn run_jobs(&self, jobs: &[(&str, Option<&SceneGraph>)], mode: Mode) -> Result<Vec<RunRecord>, PipelineError> {
        if jobs.is_empty() {
            return Err(PipelineError::Precondition("no prompts given".into()));
        }
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<RunRecord>>> = Mutex::new(vec![None; jobs.len()]);
        let workers = self.config.parallelism.min(jobs.len());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some((prompt, graph)) = jobs.get(i) else { break };
                    let record = self.run(prompt, *graph, mode);
                    slots.lock().unwrap()[i] = Some(record);
                });
            }
        });
        Ok(slots
            .into_inner()
            .unwrap()
            .into_iter()
            .map(|r| r.expect("every job ran"))
            .collect())
    }

    fn run(&self, prompt: &str, graph: Option<&SceneGraph>, mode: Mode) -> RunRecord {
        let run_id = uuid::Uuid::new_v4().simple().to_string();
        let run_dir = self.out_dir.join(&run_id);
        let started_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        let mut record = RunRecord {
            run_id,
            started_at,
            prompt_history: vec![PromptEntry {
                stage: "input".into(),
                prompt: prompt.to_string(),
            }],
            image_refs: Vec::new(),
            reports: Vec::new(),
            outcomes: Vec::new(),
            backend_journal: Vec::new(),
            timings: Vec::new(),
            status: RunStatus::Completed,
            converged: false,
            aborted_evaluation: None,
            run_dir: run_dir.clone(),
        };
        let run = self.backends.for_run();
        let result = fs::create_dir_all(&run_dir)
            .map_err(|e| Failure::io("persist", format!("{}: {e}", run_dir.display())))
            .and_then(|_| self.drive(&mut record, &run, graph, mode));
        if let Err(f) = result {
            log::warn!("run {} failed at {}: {}", record.run_id, f.stage, f.error);
            record.status = RunStatus::Failed {
                stage: f.stage,
                class: f.class,
                error: f.error,
            };
        }
        record.backend_journal = run.journal.entries();
        if let Err(e) = write_run(&record) {
            log::error!("could not persist run {}: {e}", record.run_id);
            if record.is_completed() {
                record.status = RunStatus::Failed {
                    stage: "persist".into(),
                    class: FailureClass::Io,
                    error: e.to_string(),
                };
            }
        }
        record
    }

    fn drive(
        &self,
        record: &mut RunRecord,
        run: &RunBackends,
        given: Option<&SceneGraph>,
        mode: Mode,
    ) -> Result<(), Failure> {
        let cfg = &self.config;
        let original = record.input_prompt().to_string();
        if original.trim().is_empty() {
            return Err(Failure {
                stage: "input".into(),
                class: FailureClass::Precondition,
                error: "prompt is empty".into(),
            });
        }
        let rounds = if mode == Mode::ScoreOnly { 0 } else { cfg.rounds };
        let mut image_prompt = original.clone();
        let mut base_prompt = original.clone();
        let mut graph: Option<SceneGraph> = given.cloned();

        for k in 1..=rounds + 1 {
            let is_final = k == rounds + 1;
            let image = self.generate(record, run, &image_prompt, k, is_final && rounds > 0)?;
            if is_final && rounds > 0 && !cfg.re_reflect_final {
                break;
            }
            let g = match &graph {
                Some(g) => g,
                None => {
                    let built = timed(record, "build_dsg", || build_dsg(&original, &run.llm, &self.templates, cfg.build_attempts))
                        .map_err(|e| Failure::reflection(&e))?;
                    fs::write(record.run_dir.join(GRAPH_FILE), serialize_graph(&built))
                        .map_err(|e| Failure::io("persist", e))?;
                    graph.insert(built)
                }
            };
            let report = timed(record, &format!("evaluate-{k}"), || evaluate_image(&image, g, &run.vqa)).map_err(|e| {
                if let ReflectionError::EvaluationAborted { question, partial, .. } = &e {
                    record.aborted_evaluation = Some(AbortedEvaluation {
                        image: image.identity().to_string(),
                        question: *question,
                        answers: partial.clone(),
                    });
                }
                Failure::reflection(&e)
            })?;
            record.converged = report.missing_ids().is_empty();
            record.reports.push(report.clone());
            if is_final {
                break;
            }
            let outcome = timed(record, &format!("optimize-{k}"), || {
                optimize(&base_prompt, g, &report, &run.llm, &self.templates, &self.keywords, &cfg.optimizer())
            })
            .map_err(|e| Failure::optimize(&e))?;
            let modified = outcome.modified;
            if modified {
                record.prompt_history.push(PromptEntry {
                    stage: format!("regenerated-{k}"),
                    prompt: outcome.regenerated_prompt.clone(),
                });
                if cfg.decorate {
                    record.prompt_history.push(PromptEntry {
                        stage: format!("decorated-{k}"),
                        prompt: outcome.decorated_prompt.clone(),
                    });
                }
                base_prompt = outcome.regenerated_prompt.clone();
                image_prompt = outcome.decorated_prompt.clone();
            }
            record.outcomes.push(outcome);
            if !modified {
                break;
            }
        }
        Ok(())
    }

    fn generate(
        &self,
        record: &mut RunRecord,
        run: &RunBackends,
        prompt: &str,
        k: usize,
        is_final: bool,
    ) -> Result<ImageRef, Failure> {
        let seed = self.config.seed.wrapping_add(k as u64 - 1);
        let req = ImageGenRequest::new(prompt, seed, self.config.width, self.config.height);
        let stem = record.run_dir.join(IMAGES_DIR).join(format!("round-{k}"));
        let image = timed(record, &format!("generate-{k}"), || run.t2i.generate_image(&req, &stem))
            .map_err(|e| Failure::backend("generate", &e))?;
        record.image_refs.push(ImageEntry {
            label: if is_final { "final".into() } else { format!("round-{k}") },
            image: image.clone(),
            seed,
        });
        Ok(image)
    }
}

fn timed<T>(record: &mut RunRecord, stage: &str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    record.timings.push(Timing {
        stage: stage.to_string(),
        millis: start.elapsed().as_millis() as u64,
    });
    out
}

fn write_run(record: &RunRecord) -> Result<(), RecordError> {
    let dir = &record.run_dir;
    let transcripts = dir.join(TRANSCRIPTS_DIR);
    fs::create_dir_all(&transcripts).map_err(|e| RecordError::io(&transcripts, e))?;
    let mut lines = String::new();
    for call in &record.backend_journal {
        lines.push_str(&serde_json::to_string(call).expect("call summaries serialize"));
        lines.push('\n');
    }
    let calls = transcripts.join("calls.jsonl");
    fs::write(&calls, lines).map_err(|e| RecordError::io(&calls, e))?;
    let parent = dir.parent().unwrap_or(Path::new("."));
    persist_record(record, parent)?;
    Ok(())
}

/// Scores an existing image against the graph built for `prompt`.
pub fn reflect_on_image(
    prompt: &str,
    image: &ImageRef,
    llm: &dyn ModelBackend,
    vqa: &dyn ModelBackend,
    templates: &TemplateSet,
    build_attempts: usize,
) -> Result<ReflectionReport, ReflectionError> {
    let graph = build_dsg(prompt, llm, templates, build_attempts)?;
    evaluate_image(image, &graph, vqa)
}

/// Per-stage totals of a record's timings, in milliseconds.
pub fn stage_totals(record: &RunRecord) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    for t in &record.timings {
        let stage = t.stage.split('-').next().unwrap_or(&t.stage).to_string();
        *out.entry(stage).or_insert(0) += t.millis;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{FailureKind, Reply, Rule, ScriptedBackend};
    use crate::fixtures;

    fn backends(vqa: ScriptedBackend, t2i: ScriptedBackend) -> Backends {
        Backends {
            llm: Arc::new(fixtures::llm()),
            vqa: Arc::new(vqa),
            t2i: Arc::new(t2i),
            embed: None,
        }
    }

    fn pipeline(dir: &Path, b: Backends) -> Pipeline {
        Pipeline::new(b, PipelineConfig::default(), dir).unwrap()
    }

    #[test]
    fn fixture_run() {
        let dir = tempfile::tempdir().unwrap();
        let p = pipeline(dir.path(), backends(fixtures::vqa(), fixtures::t2i()));
        let r = p.run_single(fixtures::PROMPT);
        assert_eq!(r.status, RunStatus::Completed);
        assert_eq!(r.image_refs.len(), 2);
        assert_eq!(r.reports.len(), 2);
        assert_eq!(r.reports[0].missing_ids().iter().copied().collect::<Vec<_>>(), [3, 4, 5]);
        assert_eq!(r.final_report().unwrap().score(), 1.0);
        assert!(r.converged);
        assert_eq!(r.final_prompt(), fixtures::DECORATED);
        assert_eq!(r.image_refs[1].label, "final");
        assert_eq!(r.image_refs[1].seed, 1);
        assert_eq!(r.reports[0].graph(), r.reports[1].graph());

        let run_dir = dir.path().join(&r.run_id);
        assert!(run_dir.join(RECORD_FILE).is_file());
        assert!(run_dir.join(GRAPH_FILE).is_file());
        assert!(run_dir.join("images/round-1.png").is_file());
        assert!(run_dir.join("images/round-2.png").is_file());
        let loaded = load_record(&run_dir).unwrap();
        assert_eq!(loaded, r);

        let calls = fs::read_to_string(run_dir.join("transcripts/calls.jsonl")).unwrap();
        assert_eq!(calls.lines().count(), r.backend_journal.len());
        // 3 graph stages + 3 optimizer stages, 2 images, 3 + 5 questions
        let count = |kind| r.backend_journal.iter().filter(|c| c.kind == kind).count();
        assert_eq!(count(crate::backends::CallKind::Text), 6);
        assert_eq!(count(crate::backends::CallKind::Image), 2);
        assert_eq!(count(crate::backends::CallKind::Vqa), 8);
    }

    #[test]
    fn short_circuit_run() {
        let dir = tempfile::tempdir().unwrap();
        let p = pipeline(dir.path(), backends(fixtures::vqa_all_yes(), fixtures::t2i()));
        let r = p.run_single(fixtures::PROMPT);
        assert!(r.is_completed());
        assert_eq!(r.image_refs.len(), 1);
        assert!(!r.outcome().unwrap().modified);
        assert_eq!(r.final_prompt(), fixtures::PROMPT);
        assert!(r.converged);
    }

    #[test]
    fn t2i_down_is_persisted() {
        let dir = tempfile::tempdir().unwrap();
        let t2i = ScriptedBackend::new("t2i").with_rule(Rule::image().reply(Reply::failure(FailureKind::Transport, "down")));
        let p = pipeline(dir.path(), backends(fixtures::vqa(), t2i));
        let r = p.run_single(fixtures::PROMPT);
        match &r.status {
            RunStatus::Failed { stage, class, .. } => {
                assert_eq!(stage, "generate");
                assert_eq!(*class, FailureClass::Backend);
            }
            other => panic!("{other:?}"),
        }
        let loaded = load_record(&dir.path().join(&r.run_id)).unwrap();
        assert_eq!(loaded.prompt_history, r.prompt_history);
    }

    #[test]
    fn unparseable_answer_keeps_partial() {
        let dir = tempfile::tempdir().unwrap();
        let vqa = ScriptedBackend::new("vqa").with_rules([
            Rule::vqa().input("Is the fence white?*").reply(Reply::text("perhaps")),
            Rule::vqa().reply(Reply::text("yes")),
        ]);
        let r = pipeline(dir.path(), backends(vqa, fixtures::t2i())).run_single(fixtures::PROMPT);
        assert!(matches!(&r.status, RunStatus::Failed { stage, .. } if stage == "evaluate"));
        let partial = r.aborted_evaluation.as_ref().unwrap();
        assert_eq!(partial.question, 4);
        assert_eq!(partial.answers.len(), 3);
    }

    #[test]
    fn multi_round_stops_at_budget() {
        let dir = tempfile::tempdir().unwrap();
        let vqa = ScriptedBackend::new("vqa").with_rules([
            Rule::vqa().input_exact("Is there a fence?").reply(Reply::text("no")),
            Rule::vqa().reply(Reply::text("yes")),
        ]);
        let cfg = PipelineConfig {
            rounds: 3,
            ..Default::default()
        };
        let p = Pipeline::new(backends(vqa, fixtures::t2i()), cfg, dir.path()).unwrap();
        let r = p.run_single(fixtures::PROMPT);
        assert!(r.is_completed());
        assert_eq!(r.outcomes.len(), 3);
        assert_eq!(r.image_refs.len(), 4);
        assert_eq!(r.reports.len(), 4);
        assert!(!r.converged);
        let seeds: Vec<_> = r.image_refs.iter().map(|i| i.seed).collect();
        assert_eq!(seeds, [0, 1, 2, 3]);
        // later rounds optimize the previous regenerated prompt
        assert_eq!(r.outcomes[1].original_prompt, fixtures::REGENERATED);
    }

    #[test]
    fn batch_keeps_order_and_counts_failures() {
        let dir = tempfile::tempdir().unwrap();
        let t2i = fixtures::t2i().with_rule(Rule::image().input("*broken*").reply(Reply::failure(FailureKind::Timeout, "")));
        let cfg = PipelineConfig {
            parallelism: 2,
            ..Default::default()
        };
        let p = Pipeline::new(backends(fixtures::vqa_all_yes(), t2i), cfg, dir.path()).unwrap();
        let prompts: Vec<String> = ["first prompt", "a broken prompt", "third prompt"].map(String::from).to_vec();
        let (records, summary) = p.run_batch(&prompts).unwrap();
        let inputs: Vec<_> = records.iter().map(|r| r.input_prompt()).collect();
        assert_eq!(inputs, ["first prompt", "a broken prompt", "third prompt"]);
        assert_eq!(summary.completed, 2);
        assert_eq!(summary.failed, 1);
        assert!(!records[1].is_completed());
        assert!(p.run_batch(&[]).is_err());
    }

    #[test]
    fn truncated_record_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let r = pipeline(dir.path(), backends(fixtures::vqa(), fixtures::t2i())).run_single(fixtures::PROMPT);
        let file = dir.path().join(&r.run_id).join(RECORD_FILE);
        let text = fs::read_to_string(&file).unwrap();
        fs::write(&file, &text[..text.len() / 2]).unwrap();
        match load_record(&file).unwrap_err() {
            RecordError::SchemaViolation { path, .. } => assert!(!path.is_empty()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn persist_into_unwritable_dir_fails() {
        let dir = tempfile::tempdir().unwrap();
        let r = pipeline(dir.path(), backends(fixtures::vqa(), fixtures::t2i())).run_single(fixtures::PROMPT);
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        assert!(matches!(persist_record(&r, &blocker), Err(RecordError::Io { .. })));
    }

    #[test]
    fn persist_elsewhere_copies_images() {
        let dir = tempfile::tempdir().unwrap();
        let other = tempfile::tempdir().unwrap();
        let r = pipeline(dir.path(), backends(fixtures::vqa(), fixtures::t2i())).run_single(fixtures::PROMPT);
        let path = persist_record(&r, other.path()).unwrap();
        let loaded = load_record(&path).unwrap();
        assert_eq!(loaded.normalized(), r.normalized());
        for e in &loaded.image_refs {
            assert!(e.image.path().unwrap().starts_with(other.path()));
            assert!(e.image.path().unwrap().is_file());
        }
    }

    #[test]
    fn config_validation() {
        let bad = PipelineConfig {
            stage_attempts: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(PipelineConfig::default().validate().is_ok());
    }
}

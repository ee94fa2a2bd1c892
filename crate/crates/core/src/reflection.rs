//! Self-reflection: decompose a prompt into a question graph and check a
//! generated image against it.
//!
//! Questions are asked in topological order. A `No` marks every descendant
//! as [`AnswerValue::PrunedNo`] without asking, since a missing entity
//! cannot have its colour checked.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{answer_binary, BackendError, BinaryAnswer, ImageRef, ModelBackend, VqaRequest};
use crate::scene_graph::{
    parse_dependencies, parse_questions, parse_tuples, render_tuples, GraphError, QuestionId, SceneGraph,
    DEFAULT_MAX_QUESTIONS,
};
use crate::templates::{run_stage, Stage, StageError, StageFailure, TemplateSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnswerValue {
    Yes,
    No,
    PrunedNo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerSource {
    Vqa,
    Pruned,
}

/// One question's verdict. Only the constructors can build one, so a pruned
/// answer always reads `PrunedNo`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawAnswer", into = "RawAnswer")]
pub struct Answer {
    value: AnswerValue,
    source: AnswerSource,
}

impl Answer {
    pub fn asked(answer: BinaryAnswer) -> Self {
        let value = match answer {
            BinaryAnswer::Yes => AnswerValue::Yes,
            BinaryAnswer::No => AnswerValue::No,
        };
        Self {
            value,
            source: AnswerSource::Vqa,
        }
    }

    pub fn pruned() -> Self {
        Self {
            value: AnswerValue::PrunedNo,
            source: AnswerSource::Pruned,
        }
    }

    pub fn value(&self) -> AnswerValue {
        self.value
    }

    pub fn source(&self) -> AnswerSource {
        self.source
    }

    pub fn is_yes(&self) -> bool {
        self.value == AnswerValue::Yes
    }
}

#[derive(Serialize, Deserialize)]
struct RawAnswer {
    value: AnswerValue,
    source: AnswerSource,
}

impl TryFrom<RawAnswer> for Answer {
    type Error = String;

    fn try_from(raw: RawAnswer) -> Result<Self, String> {
        match (raw.value, raw.source) {
            (AnswerValue::PrunedNo, AnswerSource::Pruned) => Ok(Answer::pruned()),
            (AnswerValue::Yes, AnswerSource::Vqa) => Ok(Answer::asked(BinaryAnswer::Yes)),
            (AnswerValue::No, AnswerSource::Vqa) => Ok(Answer::asked(BinaryAnswer::No)),
            (v, s) => Err(format!("answer {v:?} cannot come from source {s:?}")),
        }
    }
}

impl From<Answer> for RawAnswer {
    fn from(a: Answer) -> Self {
        RawAnswer {
            value: a.value,
            source: a.source,
        }
    }
}

/// Result of checking one image against a graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawReport", into = "RawReport")]
pub struct ReflectionReport {
    graph: SceneGraph,
    answers: BTreeMap<QuestionId, Answer>,
    missing_ids: BTreeSet<QuestionId>,
    score: f64,
    vqa_call_count: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReportError {
    #[error("answers do not cover the graph: expected ids {expected:?}, got {found:?}")]
    Coverage {
        expected: Vec<QuestionId>,
        found: Vec<QuestionId>,
    },
    #[error("stored {field} disagrees with the answers")]
    Inconsistent { field: &'static str },
}

impl ReflectionReport {
    /// Builds a report from a complete answer map, deriving the rest.
    pub fn from_answers(graph: SceneGraph, answers: BTreeMap<QuestionId, Answer>) -> Result<Self, ReportError> {
        let expected: Vec<_> = graph.ids().collect();
        let found: Vec<_> = answers.keys().copied().collect();
        if expected != found {
            return Err(ReportError::Coverage { expected, found });
        }
        let missing_ids = answers
            .iter()
            .filter(|(_, a)| !a.is_yes())
            .map(|(id, _)| *id)
            .collect();
        let vqa_call_count = answers.values().filter(|a| a.source == AnswerSource::Vqa).count();
        let score = score_of(&answers);
        Ok(Self {
            graph,
            answers,
            missing_ids,
            score,
            vqa_call_count,
        })
    }

    pub fn graph(&self) -> &SceneGraph {
        &self.graph
    }

    pub fn answers(&self) -> &BTreeMap<QuestionId, Answer> {
        &self.answers
    }

    pub fn answer(&self, id: QuestionId) -> Option<Answer> {
        self.answers.get(&id).copied()
    }

    pub fn missing_ids(&self) -> &BTreeSet<QuestionId> {
        &self.missing_ids
    }

    /// Ids the model answered `No` to directly.
    pub fn rejected_ids(&self) -> BTreeSet<QuestionId> {
        self.answers
            .iter()
            .filter(|(_, a)| a.value == AnswerValue::No)
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn vqa_call_count(&self) -> usize {
        self.vqa_call_count
    }
}

fn score_of(answers: &BTreeMap<QuestionId, Answer>) -> f64 {
    if answers.is_empty() {
        return 1.0;
    }
    answers.values().filter(|a| a.is_yes()).count() as f64 / answers.len() as f64
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReport {
    graph: SceneGraph,
    answers: BTreeMap<QuestionId, Answer>,
    missing_ids: BTreeSet<QuestionId>,
    score: f64,
    vqa_call_count: usize,
}

impl TryFrom<RawReport> for ReflectionReport {
    type Error = ReportError;

    fn try_from(raw: RawReport) -> Result<Self, ReportError> {
        let report = ReflectionReport::from_answers(raw.graph, raw.answers)?;
        if report.missing_ids != raw.missing_ids {
            return Err(ReportError::Inconsistent { field: "missing_ids" });
        }
        if report.vqa_call_count != raw.vqa_call_count {
            return Err(ReportError::Inconsistent {
                field: "vqa_call_count",
            });
        }
        if report.score != raw.score {
            return Err(ReportError::Inconsistent { field: "score" });
        }
        Ok(report)
    }
}

impl From<ReflectionReport> for RawReport {
    fn from(r: ReflectionReport) -> Self {
        RawReport {
            graph: r.graph,
            answers: r.answers,
            missing_ids: r.missing_ids,
            score: r.score,
            vqa_call_count: r.vqa_call_count,
        }
    }
}

/// Share of questions answered `Yes`. Empty graphs score 1.0.
pub fn alignment_score(report: &ReflectionReport) -> f64 {
    debug_assert_eq!(report.score, score_of(&report.answers));
    report.score
}

#[derive(Debug, Error)]
pub enum ReflectionError {
    #[error(transparent)]
    Stage(#[from] StageError),
    /// The VQA model failed on `question`; `partial` holds the answers
    /// gathered before it.
    #[error("evaluation aborted at question {question}: {source}")]
    EvaluationAborted {
        question: QuestionId,
        partial: BTreeMap<QuestionId, Answer>,
        #[source]
        source: BackendError,
    },
    #[error("invalid input: {0}")]
    Precondition(String),
}

fn graph_input(prompt: &str, tuples: &str) -> String {
    format!("Prompt: {prompt}\nTuples:\n{tuples}")
}

/// Builds the question graph for `prompt` with three text-model calls:
/// tuples, then questions, then dependencies. Each stage is re-asked up to
/// `max_attempts` times while its output fails to parse or validate.
pub fn build_dsg(
    prompt: &str,
    llm: &dyn ModelBackend,
    templates: &TemplateSet,
    max_attempts: usize,
) -> Result<SceneGraph, ReflectionError> {
    if max_attempts == 0 {
        return Err(ReflectionError::Precondition("max_attempts must be at least 1".into()));
    }
    if prompt.trim().is_empty() {
        return Err(ReflectionError::Precondition("prompt is empty".into()));
    }
    let prompt = prompt.trim();

    let req = templates.request(Stage::Tuples, prompt).map_err(StageError::from)?;
    let (tuples, _) = run_stage(llm, Stage::Tuples, &req, max_attempts, |raw| {
        let tuples = parse_tuples(raw)?;
        if tuples.is_empty() {
            return Err(StageFailure::Invalid("no tuples".into()));
        }
        if tuples.len() > DEFAULT_MAX_QUESTIONS {
            return Err(GraphError::TooLarge {
                count: tuples.len(),
                limit: DEFAULT_MAX_QUESTIONS,
            }
            .into());
        }
        Ok(tuples)
    })?;
    let block = render_tuples(&tuples);

    let req = templates
        .request(Stage::Questions, graph_input(prompt, &block))
        .map_err(StageError::from)?;
    let (questions, _) = run_stage(llm, Stage::Questions, &req, max_attempts, |raw| {
        let questions = parse_questions(raw)?;
        SceneGraph::build(prompt, tuples.clone(), questions.clone(), BTreeSet::new())?;
        Ok(questions)
    })?;

    let req = templates
        .request(Stage::Dependencies, graph_input(prompt, &block))
        .map_err(StageError::from)?;
    let (graph, _) = run_stage(llm, Stage::Dependencies, &req, max_attempts, |raw| {
        let edges = parse_dependencies(raw)?;
        Ok(SceneGraph::build(prompt, tuples.clone(), questions.clone(), edges)?)
    })?;
    Ok(graph)
}

/// Asks the graph's questions about `image`, pruning below every `No`.
pub fn evaluate_image(
    image: &ImageRef,
    graph: &SceneGraph,
    vqa: &dyn ModelBackend,
) -> Result<ReflectionReport, ReflectionError> {
    if let Some(path) = image.path() {
        if !path.is_file() {
            return Err(ReflectionError::Precondition(format!(
                "image {} does not exist",
                path.display()
            )));
        }
    }
    let mut answers = BTreeMap::new();
    for id in graph.topological_order() {
        if answers.contains_key(&id) {
            continue;
        }
        let question = graph.question(id).expect("ids come from the graph");
        let req = VqaRequest::new(image.clone(), question.text.clone());
        let reply = answer_binary(vqa, &req).map_err(|source| ReflectionError::EvaluationAborted {
            question: id,
            partial: answers.clone(),
            source,
        })?;
        answers.insert(id, Answer::asked(reply));
        if reply == BinaryAnswer::No {
            for d in graph.descendants(id).expect("id is in the graph") {
                answers.entry(d).or_insert_with(Answer::pruned);
            }
        }
    }
    Ok(ReflectionReport::from_answers(graph.clone(), answers).expect("every id answered"))
}

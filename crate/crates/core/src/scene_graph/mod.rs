//! Question graphs over the atomic concepts of a prompt.
//!
//! A prompt is decomposed into numbered concept tuples, each tuple gets one
//! yes/no question with the same id, and entailment edges between questions
//! form a DAG. The text model emits three line-oriented blocks (tuples,
//! questions, dependencies); [`grammar`] parses and renders them, [`SceneGraph`]
//! validates the combination, and [`document`] is the on-disk form.

mod document;
mod grammar;
mod graph;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use document::{parse_graph, serialize_graph, GraphDocument};
pub use grammar::{
    parse_dependencies, parse_questions, parse_tuple_lines, parse_tuples, render_dependencies,
    render_questions, render_tuple, render_tuples,
};
pub use graph::{SceneGraph, DEFAULT_MAX_QUESTIONS};

/// Question and tuple identifier. Ids start at 1.
pub type QuestionId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("malformed line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("duplicate id {0}")]
    DuplicateId(QuestionId),
    #[error("ids are not contiguous: expected {expected}, found {found}")]
    NonContiguousIds { expected: QuestionId, found: QuestionId },
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("question {0} depends on itself")]
    SelfDependency(QuestionId),
    #[error("dependency cycle: {}", format_path(.0))]
    CycleDetected(Vec<QuestionId>),
    #[error("edge references unknown question {0}")]
    DanglingEdge(QuestionId),
    #[error("{tuples} tuples but {questions} questions")]
    CountMismatch { tuples: usize, questions: usize },
    #[error("question {0} has no matching tuple")]
    UnmatchedQuestion(QuestionId),
    #[error("graph has {count} questions, limit is {limit}")]
    TooLarge { count: usize, limit: usize },
    #[error("unknown question id {0}")]
    UnknownId(QuestionId),
    #[error("schema violation at `{path}`: {message}")]
    SchemaViolation { path: String, message: String },
}

fn format_path(path: &[QuestionId]) -> String {
    path.iter()
        .map(|id| id.to_string())
        .collect::<Vec<_>>()
        .join(" -> ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Entity,
    Attribute,
    Relation,
    Action,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Entity,
        Category::Attribute,
        Category::Relation,
        Category::Action,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Entity => "entity",
            Category::Attribute => "attribute",
            Category::Relation => "relation",
            Category::Action => "action",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = GraphError;

    /// Case-insensitive; surrounding whitespace is ignored.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        Category::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(trimmed))
            .ok_or_else(|| GraphError::UnknownCategory(trimmed.to_string()))
    }
}

/// One atomic concept extracted from a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConceptTuple {
    pub id: QuestionId,
    pub category: Category,
    /// Qualifier such as `whole`, `color` or `spatial`.
    pub detail: String,
    /// Comma-separated arguments, e.g. `motorcycle, blue`.
    pub content: String,
}

impl ConceptTuple {
    pub fn new(
        id: QuestionId,
        category: Category,
        detail: impl Into<String>,
        content: impl Into<String>,
    ) -> Self {
        Self {
            id,
            category,
            detail: detail.into(),
            content: content.into(),
        }
    }

    /// True when both tuples describe the same concept, ignoring ids.
    pub fn same_concept(&self, other: &ConceptTuple) -> bool {
        self.category == other.category
            && self.detail.eq_ignore_ascii_case(&other.detail)
            && self.content.eq_ignore_ascii_case(&other.content)
    }
}

/// Yes/no question verifying the tuple with the same id.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Question {
    pub id: QuestionId,
    pub text: String,
    pub tuple_id: QuestionId,
}

impl Question {
    pub fn new(id: QuestionId, text: impl Into<String>) -> Self {
        Self {
            id,
            text: text.into(),
            tuple_id: id,
        }
    }
}

/// `parent -> child`: the child only makes sense if the parent holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DependencyEdge {
    pub parent: QuestionId,
    pub child: QuestionId,
}

impl DependencyEdge {
    pub fn new(parent: QuestionId, child: QuestionId) -> Self {
        Self { parent, child }
    }
}

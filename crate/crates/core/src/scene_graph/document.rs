//! JSON document form of a [`SceneGraph`].

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{ConceptTuple, DependencyEdge, GraphError, Question, QuestionId, SceneGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDocument {
    pub source_prompt: String,
    pub tuples: Vec<TupleEntry>,
    pub questions: Vec<QuestionEntry>,
    /// `[parent, child]` pairs.
    pub edges: Vec<[QuestionId; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TupleEntry {
    pub id: QuestionId,
    pub category: String,
    pub detail: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionEntry {
    pub id: QuestionId,
    pub text: String,
}

impl From<&SceneGraph> for GraphDocument {
    fn from(graph: &SceneGraph) -> Self {
        Self {
            source_prompt: graph.source_prompt().to_string(),
            tuples: graph
                .tuples()
                .iter()
                .map(|t| TupleEntry {
                    id: t.id,
                    category: t.category.to_string(),
                    detail: t.detail.clone(),
                    content: t.content.clone(),
                })
                .collect(),
            questions: graph
                .questions()
                .iter()
                .map(|q| QuestionEntry {
                    id: q.id,
                    text: q.text.clone(),
                })
                .collect(),
            edges: graph.edges().iter().map(|e| [e.parent, e.child]).collect(),
        }
    }
}

impl GraphDocument {
    pub fn into_graph(self) -> Result<SceneGraph, GraphError> {
        let tuples = self
            .tuples
            .into_iter()
            .map(|t| {
                Ok(ConceptTuple {
                    id: t.id,
                    category: t.category.parse()?,
                    detail: t.detail,
                    content: t.content,
                })
            })
            .collect::<Result<Vec<_>, GraphError>>()?;
        let questions = self
            .questions
            .into_iter()
            .map(|q| Question::new(q.id, q.text))
            .collect();
        let edges = self
            .edges
            .into_iter()
            .map(|[parent, child]| DependencyEdge::new(parent, child))
            .collect();
        SceneGraph::build(self.source_prompt, tuples, questions, edges)
    }
}

/// Pretty-printed JSON with a trailing newline. Field order is fixed and
/// tuples, questions and edges are sorted, so the output is byte-stable.
pub fn serialize_graph(graph: &SceneGraph) -> String {
    let mut out = serde_json::to_string_pretty(&GraphDocument::from(graph))
        .expect("graph documents always serialize");
    out.push('\n');
    out
}

pub fn parse_graph(text: &str) -> Result<SceneGraph, GraphError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let doc: GraphDocument =
        serde_path_to_error::deserialize(&mut de).map_err(|e| GraphError::SchemaViolation {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
    doc.into_graph()
}

impl Serialize for SceneGraph {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        GraphDocument::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SceneGraph {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        GraphDocument::deserialize(deserializer)?
            .into_graph()
            .map_err(D::Error::custom)
    }
}

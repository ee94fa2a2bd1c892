use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use super::{ConceptTuple, DependencyEdge, GraphError, Question, QuestionId};

pub const DEFAULT_MAX_QUESTIONS: usize = 200;

/// A validated question graph. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneGraph {
    source_prompt: String,
    tuples: Vec<ConceptTuple>,
    questions: Vec<Question>,
    edges: BTreeSet<DependencyEdge>,
    children: BTreeMap<QuestionId, Vec<QuestionId>>,
}

impl SceneGraph {
    pub fn build(
        prompt: impl Into<String>,
        tuples: Vec<ConceptTuple>,
        questions: Vec<Question>,
        edges: BTreeSet<DependencyEdge>,
    ) -> Result<Self, GraphError> {
        Self::build_with_limit(prompt, tuples, questions, edges, DEFAULT_MAX_QUESTIONS)
    }

    pub fn build_with_limit(
        prompt: impl Into<String>,
        mut tuples: Vec<ConceptTuple>,
        mut questions: Vec<Question>,
        edges: BTreeSet<DependencyEdge>,
        max_questions: usize,
    ) -> Result<Self, GraphError> {
        if tuples.len() != questions.len() {
            return Err(GraphError::CountMismatch {
                tuples: tuples.len(),
                questions: questions.len(),
            });
        }
        if questions.len() > max_questions {
            return Err(GraphError::TooLarge {
                count: questions.len(),
                limit: max_questions,
            });
        }
        tuples.sort_by_key(|t| t.id);
        questions.sort_by_key(|q| q.id);

        for pair in tuples.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(GraphError::DuplicateId(pair[0].id));
            }
        }
        for (expected, tuple) in (1..).zip(&tuples) {
            if tuple.id != expected {
                return Err(GraphError::NonContiguousIds {
                    expected,
                    found: tuple.id,
                });
            }
            if tuple.content.trim().is_empty() {
                return Err(GraphError::SchemaViolation {
                    path: format!("tuples[{}].content", expected - 1),
                    message: "empty content".into(),
                });
            }
        }
        for (tuple, question) in tuples.iter().zip(&questions) {
            if question.id != tuple.id || question.tuple_id != tuple.id {
                return Err(GraphError::UnmatchedQuestion(question.id));
            }
            if question.text.trim().is_empty() {
                return Err(GraphError::SchemaViolation {
                    path: format!("questions[{}].text", question.id - 1),
                    message: "empty question".into(),
                });
            }
        }

        let n = questions.len() as QuestionId;
        let mut children: BTreeMap<QuestionId, Vec<QuestionId>> =
            (1..=n).map(|id| (id, Vec::new())).collect();
        for edge in &edges {
            if edge.parent == edge.child {
                return Err(GraphError::SelfDependency(edge.child));
            }
            for end in [edge.parent, edge.child] {
                if end == 0 || end > n {
                    return Err(GraphError::DanglingEdge(end));
                }
            }
            children.entry(edge.parent).or_default().push(edge.child);
        }
        if let Some(cycle) = find_cycle(&children) {
            return Err(GraphError::CycleDetected(cycle));
        }

        Ok(Self {
            source_prompt: prompt.into(),
            tuples,
            questions,
            edges,
            children,
        })
    }

    pub fn source_prompt(&self) -> &str {
        &self.source_prompt
    }

    pub fn tuples(&self) -> &[ConceptTuple] {
        &self.tuples
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn edges(&self) -> &BTreeSet<DependencyEdge> {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn contains(&self, id: QuestionId) -> bool {
        id >= 1 && (id as usize) <= self.questions.len()
    }

    pub fn ids(&self) -> impl Iterator<Item = QuestionId> + '_ {
        self.questions.iter().map(|q| q.id)
    }

    pub fn question(&self, id: QuestionId) -> Option<&Question> {
        self.contains(id).then(|| &self.questions[id as usize - 1])
    }

    pub fn tuple(&self, id: QuestionId) -> Option<&ConceptTuple> {
        self.contains(id).then(|| &self.tuples[id as usize - 1])
    }

    pub fn max_id(&self) -> QuestionId {
        self.questions.len() as QuestionId
    }

    pub fn children(&self, id: QuestionId) -> &[QuestionId] {
        self.children.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Parents before children; among available ids the smallest goes first,
    /// which yields the lexicographically smallest topological order.
    pub fn topological_order(&self) -> Vec<QuestionId> {
        let mut indegree: BTreeMap<QuestionId, usize> = self.ids().map(|id| (id, 0)).collect();
        for edge in &self.edges {
            *indegree.get_mut(&edge.child).expect("validated edge") += 1;
        }
        let mut ready: BinaryHeap<Reverse<QuestionId>> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&id, _)| Reverse(id))
            .collect();
        let mut order = Vec::with_capacity(self.len());
        while let Some(Reverse(id)) = ready.pop() {
            order.push(id);
            for &child in self.children(id) {
                let d = indegree.get_mut(&child).expect("validated edge");
                *d -= 1;
                if *d == 0 {
                    ready.push(Reverse(child));
                }
            }
        }
        debug_assert_eq!(order.len(), self.len());
        order
    }

    /// Every question reachable from `id`, excluding `id`.
    pub fn descendants(&self, id: QuestionId) -> Result<BTreeSet<QuestionId>, GraphError> {
        if !self.contains(id) {
            return Err(GraphError::UnknownId(id));
        }
        let mut seen = BTreeSet::new();
        let mut stack: Vec<QuestionId> = self.children(id).to_vec();
        while let Some(next) = stack.pop() {
            if seen.insert(next) {
                stack.extend_from_slice(self.children(next));
            }
        }
        Ok(seen)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Mark {
    Fresh,
    Active,
    Done,
}

/// Returns a cycle as a closed path (first id repeated at the end).
fn find_cycle(children: &BTreeMap<QuestionId, Vec<QuestionId>>) -> Option<Vec<QuestionId>> {
    let mut marks: BTreeMap<QuestionId, Mark> = children.keys().map(|&k| (k, Mark::Fresh)).collect();
    for &root in children.keys() {
        if marks[&root] != Mark::Fresh {
            continue;
        }
        // iterative DFS; each frame is (node, next child index)
        let mut path: Vec<(QuestionId, usize)> = vec![(root, 0)];
        marks.insert(root, Mark::Active);
        while let Some(&mut (node, ref mut next)) = path.last_mut() {
            let kids = children.get(&node).map(Vec::as_slice).unwrap_or(&[]);
            if let Some(&child) = kids.get(*next) {
                *next += 1;
                match marks.get(&child).copied().unwrap_or(Mark::Fresh) {
                    Mark::Fresh => {
                        marks.insert(child, Mark::Active);
                        path.push((child, 0));
                    }
                    Mark::Active => {
                        let start = path.iter().position(|(n, _)| *n == child).unwrap();
                        let mut cycle: Vec<QuestionId> =
                            path[start..].iter().map(|(n, _)| *n).collect();
                        cycle.push(child);
                        return Some(cycle);
                    }
                    Mark::Done => {}
                }
            } else {
                marks.insert(node, Mark::Done);
                path.pop();
            }
        }
    }
    None
}

//! Line grammars exchanged with the text model.
//!
//! ```text
//! tuples:        <id> | <category> - <detail> (<content>)
//! questions:     <id> | <question text>
//! dependencies:  <child_id> | <parent_id>[, <parent_id>...]    (`0` = no parents)
//! ```
//!
//! Blank lines and markdown code fences are skipped. Every field is trimmed.

use std::collections::{BTreeMap, BTreeSet};

use super::{Category, ConceptTuple, DependencyEdge, GraphError, Question, QuestionId};

fn content_lines(raw: &str) -> impl Iterator<Item = (usize, &str)> {
    raw.lines()
        .enumerate()
        .map(|(i, line)| (i + 1, line.trim()))
        .filter(|(_, line)| !line.is_empty() && !line.starts_with("```"))
}

fn malformed(line: usize, reason: impl Into<String>) -> GraphError {
    GraphError::MalformedLine {
        line,
        reason: reason.into(),
    }
}

fn split_id(line_no: usize, line: &str) -> Result<(QuestionId, &str), GraphError> {
    let (id, rest) = line
        .split_once('|')
        .ok_or_else(|| malformed(line_no, "missing `|` separator"))?;
    let id = id.trim();
    let id: QuestionId = id
        .parse()
        .map_err(|_| malformed(line_no, format!("`{id}` is not an id")))?;
    if id == 0 {
        return Err(malformed(line_no, "ids start at 1"));
    }
    Ok((id, rest.trim()))
}

fn parse_tuple_line(line_no: usize, line: &str) -> Result<ConceptTuple, GraphError> {
    let (id, rest) = split_id(line_no, line)?;
    let (category, rest) = rest
        .split_once('-')
        .ok_or_else(|| malformed(line_no, "missing `-` between category and detail"))?;
    let category: Category = category.parse()?;
    let rest = rest.trim();
    let body = rest
        .strip_suffix(')')
        .ok_or_else(|| malformed(line_no, "content must be wrapped in parentheses"))?;
    let open = body
        .find('(')
        .ok_or_else(|| malformed(line_no, "content must be wrapped in parentheses"))?;
    let detail = body[..open].trim();
    let content = body[open + 1..].trim();
    if detail.is_empty() {
        return Err(malformed(line_no, "empty detail"));
    }
    if content.is_empty() {
        return Err(malformed(line_no, "empty content"));
    }
    Ok(ConceptTuple::new(id, category, detail, content))
}

/// Parses tuple lines without any constraint on the id sequence.
///
/// Used for expansion output, where the model continues numbering from an
/// existing graph and ids are reassigned afterwards.
pub fn parse_tuple_lines(raw: &str) -> Result<Vec<ConceptTuple>, GraphError> {
    content_lines(raw)
        .map(|(line_no, line)| parse_tuple_line(line_no, line))
        .collect()
}

/// Parses a complete tuple block. Ids must be unique and cover `1..=N`.
/// The result is sorted by id.
pub fn parse_tuples(raw: &str) -> Result<Vec<ConceptTuple>, GraphError> {
    let mut by_id = BTreeMap::new();
    for tuple in parse_tuple_lines(raw)? {
        let id = tuple.id;
        if by_id.insert(id, tuple).is_some() {
            return Err(GraphError::DuplicateId(id));
        }
    }
    for (expected, &found) in (1..).zip(by_id.keys()) {
        if expected != found {
            return Err(GraphError::NonContiguousIds { expected, found });
        }
    }
    Ok(by_id.into_values().collect())
}

pub fn render_tuple(tuple: &ConceptTuple) -> String {
    format!(
        "{} | {} - {} ({})",
        tuple.id, tuple.category, tuple.detail, tuple.content
    )
}

pub fn render_tuples<'a>(tuples: impl IntoIterator<Item = &'a ConceptTuple>) -> String {
    tuples
        .into_iter()
        .map(render_tuple)
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parses a question block; the result is sorted by id.
pub fn parse_questions(raw: &str) -> Result<Vec<Question>, GraphError> {
    let mut by_id = BTreeMap::new();
    for (line_no, line) in content_lines(raw) {
        let (id, text) = split_id(line_no, line)?;
        if text.is_empty() {
            return Err(malformed(line_no, "empty question"));
        }
        if by_id.insert(id, Question::new(id, text)).is_some() {
            return Err(GraphError::DuplicateId(id));
        }
    }
    Ok(by_id.into_values().collect())
}

pub fn render_questions<'a>(questions: impl IntoIterator<Item = &'a Question>) -> String {
    questions
        .into_iter()
        .map(|q| format!("{} | {}", q.id, q.text))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn parse_dependencies(raw: &str) -> Result<BTreeSet<DependencyEdge>, GraphError> {
    let mut edges = BTreeSet::new();
    for (line_no, line) in content_lines(raw) {
        let (child, parents) = split_id(line_no, line)?;
        if parents.is_empty() {
            return Err(malformed(line_no, "missing parent list"));
        }
        for parent in parents.split(',') {
            let parent = parent.trim();
            let parent: QuestionId = parent
                .parse()
                .map_err(|_| malformed(line_no, format!("`{parent}` is not an id")))?;
            if parent == 0 {
                continue;
            }
            if parent == child {
                return Err(GraphError::SelfDependency(child));
            }
            edges.insert(DependencyEdge::new(parent, child));
        }
    }
    Ok(edges)
}

/// Renders one line per id (plus any child only named by an edge), in
/// ascending order. Parentless ids are written as `<id> | 0`.
pub fn render_dependencies(
    ids: impl IntoIterator<Item = QuestionId>,
    edges: &BTreeSet<DependencyEdge>,
) -> String {
    let mut parents: BTreeMap<QuestionId, Vec<QuestionId>> =
        ids.into_iter().map(|id| (id, Vec::new())).collect();
    for edge in edges {
        parents.entry(edge.child).or_default().push(edge.parent);
    }
    parents
        .into_iter()
        .map(|(child, ps)| {
            if ps.is_empty() {
                format!("{child} | 0")
            } else {
                let ps: Vec<String> = ps.iter().map(|p| p.to_string()).collect();
                format!("{child} | {}", ps.join(", "))
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_tuple_block() {
        let tuples =
            parse_tuples("1 | entity - whole (motorcycle)\n2 | attribute - color (motorcycle, blue)")
                .unwrap();
        assert_eq!(
            tuples,
            vec![
                ConceptTuple::new(1, Category::Entity, "whole", "motorcycle"),
                ConceptTuple::new(2, Category::Attribute, "color", "motorcycle, blue"),
            ]
        );
    }

    #[test]
    fn empty_tuple_block() {
        assert!(parse_tuples("").unwrap().is_empty());
        assert!(parse_tuples("\n  \n").unwrap().is_empty());
    }

    #[test]
    fn unknown_category() {
        assert_eq!(
            parse_tuples("1 | thing - whole (cat)"),
            Err(GraphError::UnknownCategory("thing".into()))
        );
    }

    #[test]
    fn tuple_id_errors() {
        assert_eq!(
            parse_tuples("1 | entity - whole (cat)\n1 | entity - whole (dog)"),
            Err(GraphError::DuplicateId(1))
        );
        assert_eq!(
            parse_tuples("1 | entity - whole (cat)\n3 | entity - whole (dog)"),
            Err(GraphError::NonContiguousIds {
                expected: 2,
                found: 3
            })
        );
        assert!(matches!(
            parse_tuples("0 | entity - whole (cat)"),
            Err(GraphError::MalformedLine { line: 1, .. })
        ));
    }

    #[test]
    fn tuple_shape_errors() {
        for bad in [
            "1 | entity whole (cat)",
            "1 | entity - whole cat",
            "1 | entity - whole ()",
            "1 | entity - (cat)",
            "x | entity - whole (cat)",
            "entity - whole (cat)",
        ] {
            assert!(
                matches!(parse_tuples(bad), Err(GraphError::MalformedLine { line: 1, .. })),
                "{bad}"
            );
        }
    }

    #[test]
    fn tuple_lines_keep_order_and_ids() {
        let tuples = parse_tuple_lines("7 | entity - whole (cat)\n2 | entity - whole (dog)").unwrap();
        assert_eq!(tuples.iter().map(|t| t.id).collect::<Vec<_>>(), vec![7, 2]);
    }

    #[test]
    fn fields_are_trimmed_and_fences_skipped() {
        let tuples = parse_tuples("```\n  1 |  Entity -  whole  ( red  fox )  \n```").unwrap();
        assert_eq!(tuples[0], ConceptTuple::new(1, Category::Entity, "whole", "red  fox"));
    }

    #[test]
    fn parses_questions() {
        let qs = parse_questions("1 | Is there a motorcycle?\n2 | Is the motorcycle blue?").unwrap();
        assert_eq!(qs.len(), 2);
        assert_eq!(qs[1], Question::new(2, "Is the motorcycle blue?"));
        let single = parse_questions("1 | Is there a fence?").unwrap();
        assert_eq!(single[0].tuple_id, 1);
    }

    #[test]
    fn question_errors() {
        assert!(matches!(
            parse_questions("1 Is there a fence?"),
            Err(GraphError::MalformedLine { line: 1, .. })
        ));
        assert_eq!(
            parse_questions("1 | a?\n1 | b?"),
            Err(GraphError::DuplicateId(1))
        );
        assert!(matches!(
            parse_questions("1 |   "),
            Err(GraphError::MalformedLine { line: 1, .. })
        ));
    }

    #[test]
    fn parses_dependencies() {
        let edges = parse_dependencies("1 | 0\n2 | 1\n5 | 1, 3").unwrap();
        let expected: BTreeSet<_> = [(1, 2), (1, 5), (3, 5)]
            .into_iter()
            .map(|(p, c)| DependencyEdge::new(p, c))
            .collect();
        assert_eq!(edges, expected);
        assert!(parse_dependencies("1 | 0").unwrap().is_empty());
    }

    #[test]
    fn dependency_errors() {
        assert_eq!(parse_dependencies("2 | 2"), Err(GraphError::SelfDependency(2)));
        assert!(matches!(
            parse_dependencies("2 | one"),
            Err(GraphError::MalformedLine { line: 1, .. })
        ));
        assert!(matches!(
            parse_dependencies("1 | 0\n2 |"),
            Err(GraphError::MalformedLine { line: 2, .. })
        ));
    }

    #[test]
    fn renders_parentless_ids() {
        let edges: BTreeSet<_> = [DependencyEdge::new(1, 2)].into_iter().collect();
        assert_eq!(render_dependencies(1..=3, &edges), "1 | 0\n2 | 1\n3 | 0");
    }

    fn field(extra: &'static str) -> impl Strategy<Value = String> {
        // words separated by single spaces; `extra` adds allowed punctuation
        let word = format!("[a-z0-9{extra}]{{1,8}}");
        prop::collection::vec(proptest::string::string_regex(&word).unwrap(), 1..4)
            .prop_map(|w| w.join(" "))
    }

    fn tuples_strategy() -> impl Strategy<Value = Vec<ConceptTuple>> {
        prop::collection::vec(
            (
                prop::sample::select(Category::ALL.to_vec()),
                field("-"),
                field(",'"),
            ),
            0..15,
        )
        .prop_map(|items| {
            items
                .into_iter()
                .enumerate()
                .map(|(i, (c, d, x))| ConceptTuple::new(i as u32 + 1, c, d, x))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn tuples_round_trip(tuples in tuples_strategy()) {
            prop_assert_eq!(parse_tuples(&render_tuples(&tuples)).unwrap(), tuples);
        }

        #[test]
        fn questions_round_trip(texts in prop::collection::vec(field("?,|"), 0..15)) {
            let qs: Vec<Question> = texts
                .into_iter()
                .enumerate()
                .map(|(i, t)| Question::new(i as u32 + 1, t))
                .collect();
            prop_assert_eq!(parse_questions(&render_questions(&qs)).unwrap(), qs);
        }

        #[test]
        fn dependencies_round_trip(
            n in 1u32..15,
            pairs in prop::collection::vec((1u32..15, 1u32..15), 0..30),
        ) {
            let edges: BTreeSet<_> = pairs
                .into_iter()
                .filter(|(p, c)| p != c && *p <= n && *c <= n)
                .map(|(p, c)| DependencyEdge::new(p, c))
                .collect();
            let rendered = render_dependencies(1..=n, &edges);
            prop_assert_eq!(parse_dependencies(&rendered).unwrap(), edges);
        }
    }
}

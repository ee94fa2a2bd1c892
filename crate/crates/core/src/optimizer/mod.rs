//! Prompt optimization: expand the concepts the image missed, rewrite the
//! prompt from the enlarged concept set, then append aesthetic keywords.

mod keywords;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use keywords::{
    parse_keyword_line, select_keywords, KeywordChoice, KeywordClassTable, KeywordTableError, CLASSES,
    MAX_KEYWORD_WORDS, PER_CLASS_LIMIT,
};

use crate::backends::ModelBackend;
use crate::reflection::{AnswerValue, ReflectionReport};
use crate::scene_graph::{parse_tuple_lines, render_tuple, render_tuples, ConceptTuple, QuestionId, SceneGraph};
use crate::templates::{run_stage, Stage, StageError, StageFailure, TemplateSet};

pub const DEFAULT_PROMPT_CAP: usize = 480;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecorationMode {
    /// `<prompt>, kw1, kw2`
    #[default]
    Append,
    /// Keywords go before the prompt's closing punctuation.
    Inline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub stage_attempts: usize,
    pub decorate: bool,
    pub decoration_mode: DecorationMode,
    /// Longest regenerated prompt accepted, in characters.
    pub prompt_cap: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            stage_attempts: 3,
            decorate: true,
            decoration_mode: DecorationMode::Append,
            prompt_cap: DEFAULT_PROMPT_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionResult {
    pub new_tuples: Vec<ConceptTuple>,
    /// Questions answered `No` whose concepts the expansion enriches.
    pub targeted_ids: BTreeSet<QuestionId>,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationOutcome {
    pub original_prompt: String,
    pub regenerated_prompt: String,
    pub decorated_prompt: String,
    pub expansion: Option<ExpansionResult>,
    pub modified: bool,
}

impl OptimizationOutcome {
    pub fn unchanged(prompt: &str) -> Self {
        Self {
            original_prompt: prompt.to_string(),
            regenerated_prompt: prompt.to_string(),
            decorated_prompt: prompt.to_string(),
            expansion: None,
            modified: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error(transparent)]
    Stage(#[from] StageError),
    #[error("expansion produced no new concepts for questions {0:?}")]
    EmptyExpansion(Vec<QuestionId>),
    #[error("invalid input: {0}")]
    Precondition(String),
}

impl OptimizeError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            OptimizeError::Stage(e) => e.stage(),
            OptimizeError::EmptyExpansion(_) => Some(Stage::Expansion),
            OptimizeError::Precondition(_) => None,
        }
    }
}

fn status_tag(value: Option<AnswerValue>) -> &'static str {
    match value {
        Some(AnswerValue::Yes) => "[yes]",
        Some(AnswerValue::No) => "[no]",
        Some(AnswerValue::PrunedNo) => "[pruned]",
        None => "",
    }
}

fn expansion_input(prompt: &str, graph: &SceneGraph, report: &ReflectionReport) -> String {
    let mut out = format!("Prompt: {prompt}\nConcepts:\n");
    for t in graph.tuples() {
        let tag = status_tag(report.answer(t.id).map(|a| a.value()));
        out.push_str(&render_tuple(t));
        if !tag.is_empty() {
            out.push(' ');
            out.push_str(tag);
        }
        out.push('\n');
    }
    out.pop();
    out
}

/// Asks the model for new tuples describing the missed concepts.
///
/// Returned tuples skip anything equal to an existing concept and are
/// renumbered from one past the graph's highest id, in output order. A reply
/// with no usable tuple is asked for once more before giving up.
pub fn expand_concepts(
    prompt: &str,
    graph: &SceneGraph,
    report: &ReflectionReport,
    llm: &dyn ModelBackend,
    templates: &TemplateSet,
    max_attempts: usize,
) -> Result<ExpansionResult, OptimizeError> {
    if report.missing_ids().is_empty() {
        return Err(OptimizeError::Precondition(
            "nothing is missing; the caller must skip optimization".into(),
        ));
    }
    if report.graph() != graph {
        return Err(OptimizeError::Precondition("report was made for a different graph".into()));
    }
    if max_attempts == 0 {
        return Err(OptimizeError::Precondition("max_attempts must be at least 1".into()));
    }
    let req = templates
        .request(Stage::Expansion, expansion_input(prompt, graph, report))
        .map_err(StageError::from)?;
    let next_id = graph.max_id() + 1;
    for _ in 0..2 {
        let (new_tuples, raw) = run_stage(llm, Stage::Expansion, &req, max_attempts, |raw| {
            let mut fresh: Vec<ConceptTuple> = Vec::new();
            for t in parse_tuple_lines(raw)? {
                let known = graph.tuples().iter().chain(&fresh).any(|o| o.same_concept(&t));
                if !known {
                    fresh.push(t);
                }
            }
            for (t, id) in fresh.iter_mut().zip(next_id..) {
                t.id = id;
            }
            Ok::<_, StageFailure>(fresh)
        })?;
        if !new_tuples.is_empty() {
            return Ok(ExpansionResult {
                new_tuples,
                targeted_ids: report.rejected_ids(),
                raw,
            });
        }
        log::debug!("expansion returned no new tuples");
    }
    Err(OptimizeError::EmptyExpansion(report.missing_ids().iter().copied().collect()))
}

fn check_regenerated(raw: &str, cap: usize) -> Result<String, StageFailure> {
    let text = raw.trim();
    if text.is_empty() {
        return Err(StageFailure::Invalid("empty prompt".into()));
    }
    if text.lines().count() > 1 {
        return Err(StageFailure::Invalid("prompt spans several lines".into()));
    }
    if text.contains('|') {
        return Err(StageFailure::Invalid("prompt contains tuple syntax".into()));
    }
    let len = text.chars().count();
    if len > cap {
        return Err(StageFailure::Invalid(format!("prompt has {len} characters, cap is {cap}")));
    }
    Ok(text.to_string())
}

/// Writes a new prompt covering `all_tuples`.
pub fn regenerate_prompt(
    original: &str,
    all_tuples: &[ConceptTuple],
    llm: &dyn ModelBackend,
    templates: &TemplateSet,
    max_attempts: usize,
    cap: usize,
) -> Result<String, OptimizeError> {
    if all_tuples.is_empty() {
        return Err(OptimizeError::Precondition("no concepts to write a prompt from".into()));
    }
    let input = format!("Prompt: {original}\nConcepts:\n{}", render_tuples(all_tuples));
    let req = templates.request(Stage::Regeneration, input).map_err(StageError::from)?;
    let (text, _) = run_stage(llm, Stage::Regeneration, &req, max_attempts, |raw| check_regenerated(raw, cap))?;
    Ok(text)
}

/// Joins keywords onto a prompt.
pub fn attach_keywords(prompt: &str, keywords: &[String], mode: DecorationMode) -> String {
    if keywords.is_empty() {
        return prompt.to_string();
    }
    let list = keywords.join(", ");
    match mode {
        DecorationMode::Append => format!("{prompt}, {list}"),
        DecorationMode::Inline => {
            let body = prompt.trim_end_matches(['.', '!', '?']);
            format!("{body}, {list}{}", &prompt[body.len()..])
        }
    }
}

/// Lets the model pick aesthetic keywords and appends them to `prompt`.
pub fn decorate_prompt(
    prompt: &str,
    llm: &dyn ModelBackend,
    table: &KeywordClassTable,
    templates: &TemplateSet,
    max_attempts: usize,
    mode: DecorationMode,
) -> Result<String, OptimizeError> {
    if prompt.trim().is_empty() {
        return Err(OptimizeError::Precondition("prompt is empty".into()));
    }
    let listing = table.render();
    let req = templates
        .request_with(Stage::Decoration, prompt, &[("keywords", listing.as_str())])
        .map_err(StageError::from)?;
    let (choices, _) = run_stage(llm, Stage::Decoration, &req, max_attempts, |raw| {
        parse_keyword_line(raw, table).map_err(StageFailure::Invalid)
    })?;
    let keywords = select_keywords(prompt, &choices, table);
    Ok(attach_keywords(prompt, &keywords, mode))
}

/// Expansion, regeneration and optional decoration. A report with nothing
/// missing returns the prompt untouched without calling the model.
pub fn optimize(
    prompt: &str,
    graph: &SceneGraph,
    report: &ReflectionReport,
    llm: &dyn ModelBackend,
    templates: &TemplateSet,
    table: &KeywordClassTable,
    config: &OptimizerConfig,
) -> Result<OptimizationOutcome, OptimizeError> {
    if report.missing_ids().is_empty() {
        return Ok(OptimizationOutcome::unchanged(prompt));
    }
    let attempts = config.stage_attempts;
    let expansion = expand_concepts(prompt, graph, report, llm, templates, attempts)?;
    let all: Vec<ConceptTuple> = graph.tuples().iter().chain(&expansion.new_tuples).cloned().collect();
    let regenerated = regenerate_prompt(prompt, &all, llm, templates, attempts, config.prompt_cap)?;
    let decorated = if config.decorate {
        decorate_prompt(&regenerated, llm, table, templates, attempts, config.decoration_mode)?
    } else {
        regenerated.clone()
    };
    Ok(OptimizationOutcome {
        original_prompt: prompt.to_string(),
        regenerated_prompt: regenerated,
        decorated_prompt: decorated,
        expansion: Some(expansion),
        modified: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{BinaryAnswer, Reply, Rule, ScriptedBackend};
    use crate::fixtures;
    use crate::reflection::Answer;

    fn fence_report() -> ReflectionReport {
        let graph = fixtures::graph();
        let answers = [
            (1, Answer::asked(BinaryAnswer::Yes)),
            (2, Answer::asked(BinaryAnswer::Yes)),
            (3, Answer::asked(BinaryAnswer::No)),
            (4, Answer::pruned()),
            (5, Answer::pruned()),
        ]
        .into_iter()
        .collect();
        ReflectionReport::from_answers(graph, answers).unwrap()
    }

    fn all_yes() -> ReflectionReport {
        let graph = fixtures::graph();
        let answers = graph.ids().map(|id| (id, Answer::asked(BinaryAnswer::Yes))).collect();
        ReflectionReport::from_answers(graph, answers).unwrap()
    }

    fn llm_for(stage: Stage, replies: Vec<Reply>) -> ScriptedBackend {
        ScriptedBackend::new("llm").with_rule(Rule::text().label(stage.as_str()).replies(replies))
    }

    #[test]
    fn expansion_fixture() {
        let llm = fixtures::llm();
        let r = expand_concepts(
            fixtures::PROMPT,
            &fixtures::graph(),
            &fence_report(),
            &llm,
            &TemplateSet::bundled(),
            3,
        )
        .unwrap();
        let ids: Vec<_> = r.new_tuples.iter().map(|t| t.id).collect();
        assert_eq!(ids, [6, 7]);
        assert_eq!(r.new_tuples[0].content, "fence, wooden");
        assert_eq!(r.targeted_ids.into_iter().collect::<Vec<_>>(), [3]);
        let input = &llm.journal().entries()[0].input;
        assert!(input.contains("3 | entity - whole (fence) [no]"), "{input}");
        assert!(input.contains("4 | attribute - color (fence, white) [pruned]"));
        assert!(input.contains("1 | entity - whole (motorcycle) [yes]"));
    }

    #[test]
    fn colliding_ids_are_renumbered() {
        let llm = llm_for(
            Stage::Expansion,
            vec![Reply::text("2 | attribute - material (fence, wooden)\n2 | entity - whole (fence)")],
        );
        let r = expand_concepts(
            fixtures::PROMPT,
            &fixtures::graph(),
            &fence_report(),
            &llm,
            &TemplateSet::bundled(),
            3,
        )
        .unwrap();
        assert_eq!(r.new_tuples.len(), 1, "restated concept dropped");
        assert_eq!(r.new_tuples[0].id, 6);
        assert_eq!(r.new_tuples[0].content, "fence, wooden");
    }

    #[test]
    fn empty_expansion_is_retried_once() {
        let llm = llm_for(
            Stage::Expansion,
            vec![Reply::text("3 | entity - whole (fence)"), Reply::text("6 | attribute - state (fence, tall)")],
        );
        let r = expand_concepts(fixtures::PROMPT, &fixtures::graph(), &fence_report(), &llm, &TemplateSet::bundled(), 1)
            .unwrap();
        assert_eq!(r.new_tuples.len(), 1);

        let llm = llm_for(Stage::Expansion, vec![Reply::text("")]);
        let err =
            expand_concepts(fixtures::PROMPT, &fixtures::graph(), &fence_report(), &llm, &TemplateSet::bundled(), 3)
                .unwrap_err();
        assert!(matches!(err, OptimizeError::EmptyExpansion(_)));
        assert_eq!(llm.journal().len(), 2);
    }

    #[test]
    fn expansion_needs_missing_concepts() {
        let err = expand_concepts(
            fixtures::PROMPT,
            &fixtures::graph(),
            &all_yes(),
            &fixtures::llm(),
            &TemplateSet::bundled(),
            3,
        )
        .unwrap_err();
        assert!(matches!(err, OptimizeError::Precondition(_)));
    }

    #[test]
    fn regeneration_validators() {
        let tuples = fixtures::graph().tuples().to_vec();
        let long = "a".repeat(600);
        let llm = llm_for(
            Stage::Regeneration,
            vec![
                Reply::text("1 | entity - whole (motorcycle)"),
                Reply::text(long),
                Reply::text("two\nlines"),
                Reply::text(fixtures::REGENERATED),
            ],
        );
        let got = regenerate_prompt(fixtures::PROMPT, &tuples, &llm, &TemplateSet::bundled(), 4, 480).unwrap();
        assert_eq!(got, fixtures::REGENERATED);
        assert_eq!(llm.journal().len(), 4);

        let llm = llm_for(Stage::Regeneration, vec![Reply::text("x | y")]);
        let err = regenerate_prompt(fixtures::PROMPT, &tuples, &llm, &TemplateSet::bundled(), 2, 480).unwrap_err();
        assert!(matches!(
            err,
            OptimizeError::Stage(StageError::Exhausted {
                stage: Stage::Regeneration,
                attempts: 2,
                ..
            })
        ));
    }

    fn decorate_with(prompt: &str, reply: &str) -> String {
        let llm = llm_for(Stage::Decoration, vec![Reply::text(reply)]);
        decorate_prompt(
            prompt,
            &llm,
            &KeywordClassTable::default(),
            &TemplateSet::bundled(),
            3,
            DecorationMode::Append,
        )
        .unwrap()
    }

    #[test]
    fn decoration_examples() {
        assert_eq!(
            decorate_with("a red fox in snow", "quality: best quality, light: soft lighting"),
            "a red fox in snow, best quality, soft lighting"
        );
        assert_eq!(decorate_with("a red fox in snow", "none"), "a red fox in snow");
        assert_eq!(
            decorate_with("a red fox in snow", "quality: best quality, best quality"),
            "a red fox in snow, best quality"
        );
        assert_eq!(
            decorate_with("a portrait in oil painting", "style: oil painting, light: studio lighting"),
            "a portrait in oil painting, studio lighting"
        );
    }

    #[test]
    fn decoration_preamble_lists_the_table() {
        let llm = llm_for(Stage::Decoration, vec![Reply::text("none")]);
        let table = KeywordClassTable::default();
        decorate_prompt("a cat", &llm, &table, &TemplateSet::bundled(), 1, DecorationMode::Append).unwrap();
        // The journal keeps the input only; check the request through a digest rule instead.
        let req = TemplateSet::bundled()
            .request_with(Stage::Decoration, "a cat", &[("keywords", table.render().as_str())])
            .unwrap();
        assert!(req.preamble.contains("light: studio lighting, soft lighting"));
        assert!(!req.preamble.contains("{keywords}"));
        assert_eq!(llm.journal().entries()[0].digest, req.digest());
    }

    #[test]
    fn inline_mode() {
        let kws = vec!["best quality".to_string()];
        assert_eq!(attach_keywords("A cat.", &kws, DecorationMode::Inline), "A cat, best quality.");
        assert_eq!(attach_keywords("A cat", &kws, DecorationMode::Inline), "A cat, best quality");
        assert_eq!(attach_keywords("A cat.", &kws, DecorationMode::Append), "A cat., best quality");
    }

    #[test]
    fn short_circuit() {
        let llm = fixtures::llm();
        let out = optimize(
            "anything at all",
            &fixtures::graph(),
            &all_yes(),
            &llm,
            &TemplateSet::bundled(),
            &KeywordClassTable::default(),
            &OptimizerConfig::default(),
        )
        .unwrap();
        assert_eq!(out, OptimizationOutcome::unchanged("anything at all"));
        assert!(llm.journal().is_empty());
    }

    #[test]
    fn full_optimization() {
        let out = optimize(
            fixtures::PROMPT,
            &fixtures::graph(),
            &fence_report(),
            &fixtures::llm(),
            &TemplateSet::bundled(),
            &KeywordClassTable::default(),
            &OptimizerConfig::default(),
        )
        .unwrap();
        assert!(out.modified);
        assert_eq!(out.regenerated_prompt, fixtures::REGENERATED);
        assert_eq!(out.decorated_prompt, fixtures::DECORATED);

        let plain = optimize(
            fixtures::PROMPT,
            &fixtures::graph(),
            &fence_report(),
            &fixtures::llm(),
            &TemplateSet::bundled(),
            &KeywordClassTable::default(),
            &OptimizerConfig {
                decorate: false,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(plain.decorated_prompt, fixtures::REGENERATED);
    }

    #[test]
    fn exhausted_expansion_is_an_error() {
        let llm = llm_for(Stage::Expansion, vec![Reply::text("not a tuple")]);
        let err = optimize(
            fixtures::PROMPT,
            &fixtures::graph(),
            &fence_report(),
            &llm,
            &TemplateSet::bundled(),
            &KeywordClassTable::default(),
            &OptimizerConfig::default(),
        )
        .unwrap_err();
        assert_eq!(err.stage(), Some(Stage::Expansion));
    }
}

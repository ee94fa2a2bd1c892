//! Benchmark harness: score raw and optimized prompts over a dataset and
//! tabulate the share of `Yes` answers per category.
//!
//! Datasets are JSON Lines, one item per line:
//!
//! ```text
//! {"item_id": "coco-1", "category": "coco", "prompt": "A cat on a sofa", "graph": { ...graph document... }}
//! ```
//!
//! `graph` is optional; without it the graph is built at run time.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, EmbedPayload, ImageRef, ModelBackend};
use crate::pipeline::{Pipeline, PipelineError, RunRecord, RunStatus};
use crate::scene_graph::SceneGraph;

pub const DEFAULT_CLIP_WEIGHT: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: invalid item at `{path}`: {message}")]
    SchemaViolation { line: usize, path: String, message: String },
    #[error("line {line}: duplicate item id `{item_id}`")]
    DuplicateItemId { line: usize, item_id: String },
    #[error("vectors have dimensions {left} and {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cannot take the cosine of a zero vector")]
    ZeroVector,
    #[error("weight must be positive and finite, got {0}")]
    InvalidWeight(f64),
    #[error("{0}")]
    Pipeline(String),
}

impl From<PipelineError> for BenchError {
    fn from(e: PipelineError) -> Self {
        BenchError::Pipeline(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetItem {
    pub item_id: String,
    pub category: String,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<SceneGraph>,
}

/// Parses a JSON Lines dataset. Blank lines are skipped; line numbers in
/// errors start at 1.
pub fn parse_dataset(text: &str) -> Result<Vec<DatasetItem>, BenchError> {
    parse_lines(text.lines().map(|l| Ok(l.to_string())))
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetItem>, BenchError> {
    let io = |e: std::io::Error| BenchError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let file = fs::File::open(path).map_err(io)?;
    parse_lines(BufReader::new(file).lines().map(|l| l.map_err(io)))
}

fn parse_lines(lines: impl Iterator<Item = Result<String, BenchError>>) -> Result<Vec<DatasetItem>, BenchError> {
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut de = serde_json::Deserializer::from_str(&line);
        let item: DatasetItem =
            serde_path_to_error::deserialize(&mut de).map_err(|e| BenchError::SchemaViolation {
                line: line_no,
                path: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        if item.prompt.trim().is_empty() {
            return Err(BenchError::SchemaViolation {
                line: line_no,
                path: "prompt".into(),
                message: "prompt is empty".into(),
            });
        }
        if !seen.insert(item.item_id.clone()) {
            return Err(BenchError::DuplicateItemId {
                line: line_no,
                item_id: item.item_id,
            });
        }
        items.push(item);
    }
    Ok(items)
}

/// `w * max(cos(t, i), 0)`.
pub fn clip_relevance(text_vec: &[f64], image_vec: &[f64], w: f64) -> Result<f64, BenchError> {
    if text_vec.len() != image_vec.len() {
        return Err(BenchError::DimensionMismatch {
            left: text_vec.len(),
            right: image_vec.len(),
        });
    }
    if !(w.is_finite() && w > 0.0) {
        return Err(BenchError::InvalidWeight(w));
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (nt, ni) = (norm(text_vec), norm(image_vec));
    if nt == 0.0 || ni == 0.0 {
        return Err(BenchError::ZeroVector);
    }
    let dot: f64 = text_vec.iter().zip(image_vec).map(|(a, b)| a * b).sum();
    let cos = (dot / (nt * ni)).clamp(-1.0, 1.0);
    Ok(w * cos.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMode {
    Baseline,
    Optimized,
    Both,
}

impl BenchMode {
    fn baseline(self) -> bool {
        matches!(self, BenchMode::Baseline | BenchMode::Both)
    }

    fn optimized(self) -> bool {
        matches!(self, BenchMode::Optimized | BenchMode::Both)
    }
}

/// Relevance of the final image to the raw and to the final prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipScores {
    pub raw_prompt: f64,
    pub final_prompt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub item_id: String,
    pub category: String,
    pub baseline: Option<f64>,
    pub optimized: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<ClipScores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aesthetic: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub run_ids: Vec<String>,
}

impl ItemResult {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMean {
    pub category: String,
    /// Items that completed.
    pub count: usize,
    pub baseline: Option<f64>,
    pub optimized: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub mode: BenchMode,
    pub items: Vec<ItemResult>,
    /// In order of first appearance in the dataset.
    pub categories: Vec<CategoryMean>,
    pub overall_baseline: Option<f64>,
    pub overall_optimized: Option<f64>,
    pub failed: Vec<String>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Mode name, per-category cells, overall cell.
type Row = (&'static str, Vec<Option<f64>>, Option<f64>);

impl BenchReport {
    /// Aggregates item results; failed items are left out of every mean.
    pub fn from_items(mode: BenchMode, items: Vec<ItemResult>) -> Self {
        let mut order: Vec<String> = Vec::new();
        for it in &items {
            if !order.contains(&it.category) {
                order.push(it.category.clone());
            }
        }
        let ok = || items.iter().filter(|i| !i.failed());
        let categories = order
            .into_iter()
            .map(|c| {
                let members = || ok().filter(|i| i.category == c);
                CategoryMean {
                    count: members().count(),
                    baseline: mean(members().filter_map(|i| i.baseline)).filter(|_| mode.baseline()),
                    optimized: mean(members().filter_map(|i| i.optimized)).filter(|_| mode.optimized()),
                    category: c,
                }
            })
            .collect();
        let overall_baseline = mean(ok().filter_map(|i| i.baseline)).filter(|_| mode.baseline());
        let overall_optimized = mean(ok().filter_map(|i| i.optimized)).filter(|_| mode.optimized());
        let failed = items.iter().filter(|i| i.failed()).map(|i| i.item_id.clone()).collect();
        Self {
            mode,
            items,
            categories,
            overall_baseline,
            overall_optimized,
            failed,
        }
    }

    /// Table rows present for this mode.
    fn rows(&self) -> Vec<Row> {
        let mut rows = Vec::new();
        if self.mode.baseline() {
            let cells = self.categories.iter().map(|c| c.baseline).collect();
            rows.push(("baseline", cells, self.overall_baseline));
        }
        if self.mode.optimized() {
            let cells = self.categories.iter().map(|c| c.optimized).collect();
            rows.push(("optimized", cells, self.overall_optimized));
        }
        rows
    }
}

fn status_error(record: &RunRecord) -> Option<String> {
    match &record.status {
        RunStatus::Completed => None,
        RunStatus::Failed { stage, error, .. } => Some(format!("{stage}: {error}")),
    }
}

fn clip_scores(embed: &dyn ModelBackend, raw: &str, record: &RunRecord) -> Result<ClipScores, BackendError> {
    let image: &ImageRef = &record.image_refs.last().expect("completed runs have images").image;
    let iv = embed.embed(&EmbedPayload::Image(image.clone()))?;
    let raw_v = embed.embed(&EmbedPayload::Text(raw.to_string()))?;
    let final_v = embed.embed(&EmbedPayload::Text(record.final_prompt().to_string()))?;
    let score = |t: &[f64]| {
        clip_relevance(t, &iv, DEFAULT_CLIP_WEIGHT).map_err(|e| BackendError::InvalidResponse(e.to_string()))
    };
    Ok(ClipScores {
        raw_prompt: score(&raw_v)?,
        final_prompt: score(&final_v)?,
    })
}

/// Runs every item through the pipeline and aggregates the scores.
///
/// `baseline` scores one image from the raw prompt. `optimized` scores the
/// image from the final prompt. `both` takes the baseline from the first
/// report of the optimized run, which was made from the same raw-prompt image.
pub fn run_benchmark(dataset: &[DatasetItem], pipeline: &Pipeline, mode: BenchMode) -> BenchReport {
    if dataset.is_empty() {
        return BenchReport::from_items(mode, Vec::new());
    }
    let jobs: Vec<(&str, Option<&SceneGraph>)> = dataset.iter().map(|d| (d.prompt.as_str(), d.graph.as_ref())).collect();
    let records = pipeline
        .run_jobs_with_graphs(&jobs, mode.optimized())
        .expect("dataset is not empty");
    let embed = pipeline.backends().embed.clone();

    let items = dataset
        .iter()
        .zip(&records)
        .map(|(item, record)| {
            let mut result = ItemResult {
                item_id: item.item_id.clone(),
                category: item.category.clone(),
                baseline: None,
                optimized: None,
                clip: None,
                aesthetic: None,
                error: status_error(record),
                run_ids: vec![record.run_id.clone()],
            };
            if result.error.is_some() {
                return result;
            }
            if mode.baseline() {
                result.baseline = record.initial_report().map(|r| r.score());
            }
            if mode.optimized() {
                result.optimized = record.final_report().map(|r| r.score());
            }
            if let Some(embed) = &embed {
                match clip_scores(embed.as_ref(), &item.prompt, record) {
                    Ok(c) => result.clip = Some(c),
                    Err(BackendError::CapabilityMissing(_)) => {}
                    Err(e) => log::warn!("{}: relevance scoring failed: {e}", item.item_id),
                }
                let image = &record.image_refs.last().expect("completed").image;
                match embed.aesthetic_score(image) {
                    Ok(s) => result.aesthetic = Some(s),
                    Err(BackendError::CapabilityMissing(_)) => {}
                    Err(e) => log::warn!("{}: aesthetic scoring failed: {e}", item.item_id),
                }
            }
            result
        })
        .collect();
    BenchReport::from_items(mode, items)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Csv,
}

fn cell(score: Option<f64>) -> String {
    score.map_or_else(|| "n/a".to_string(), |s| format!("{:.1}", s * 100.0))
}

/// One row per mode, one column per category plus the average, scores as
/// percentages with one decimal.
pub fn render_report(report: &BenchReport, format: ReportFormat) -> String {
    let mut header = vec!["mode".to_string()];
    header.extend(report.categories.iter().map(|c| c.category.clone()));
    header.push("average".into());
    let rows: Vec<Vec<String>> = report
        .rows()
        .into_iter()
        .map(|(name, cells, overall)| {
            let mut row = vec![name.to_string()];
            row.extend(cells.into_iter().map(cell));
            row.push(cell(overall));
            row
        })
        .collect();

    match format {
        ReportFormat::Markdown => {
            let mut out = String::new();
            let line = |cols: &[String]| format!("| {} |\n", cols.join(" | "));
            out.push_str(&line(&header));
            let rule: Vec<String> = header
                .iter()
                .enumerate()
                .map(|(i, _)| if i == 0 { "---".into() } else { "---:".into() })
                .collect();
            out.push_str(&line(&rule));
            for row in &rows {
                out.push_str(&line(row));
            }
            if !report.failed.is_empty() {
                let _ = writeln!(out, "\nFailed items ({}): {}", report.failed.len(), report.failed.join(", "));
            }
            out
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&header).expect("in-memory csv");
            for row in &rows {
                w.write_record(row).expect("in-memory csv");
            }
            String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
        }
    }
}

/// Categories in the report, for callers building their own tables.
pub fn category_names(report: &BenchReport) -> BTreeSet<&str> {
    report.categories.iter().map(|c| c.category.as_str()).collect()
}

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use promptloop::backends::ImageRef;
use promptloop::bench::{self, BenchMode, ReportFormat};
use promptloop::pipeline::{self, FailureClass, Pipeline, RunRecord, RunStatus};
use promptloop::reflection::{build_dsg, evaluate_image, ReflectionError};
use promptloop::scene_graph::serialize_graph;
use promptloop::templates::StageError;
use serde_json::json;

const EXIT_CONFIG: u8 = 2;
const EXIT_BACKEND: u8 = 3;
const EXIT_EXHAUSTED: u8 = 4;
const EXIT_OTHER: u8 = 1;

#[derive(Parser)]
#[command(name = "promptloop", version, about = "Refine text-to-image prompts by checking generated images")]
struct Cli {
    /// Config file; defaults to $PROMPTLOOP_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the generate-reflect-optimize loop for one prompt.
    Optimize {
        #[arg(long)]
        prompt: String,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        no_decorate: bool,
    },
    /// Score an existing image against a prompt.
    Reflect {
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        image: PathBuf,
    },
    /// Print the question graph for a prompt.
    Dsg {
        #[arg(long)]
        prompt: String,
    },
    /// Score a dataset of prompts.
    RunBench {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "bench-out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Both)]
        mode: ModeArg,
        #[arg(long, value_enum, default_value_t = FormatArg::Markdown)]
        format: FormatArg,
        /// Only the first N items.
        #[arg(long)]
        limit: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Baseline,
    Optimized,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Markdown,
    Csv,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn other(message: impl ToString) -> Self {
        Self {
            code: EXIT_OTHER,
            message: message.to_string(),
        }
    }
}

impl From<ReflectionError> for Failure {
    fn from(e: ReflectionError) -> Self {
        let code = match &e {
            ReflectionError::Stage(StageError::Exhausted { .. }) => EXIT_EXHAUSTED,
            ReflectionError::Stage(StageError::Backend { .. }) | ReflectionError::EvaluationAborted { .. } => {
                EXIT_BACKEND
            }
            ReflectionError::Stage(StageError::Template(_)) => EXIT_CONFIG,
            ReflectionError::Precondition(_) => EXIT_OTHER,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn exit_code_for(record: &RunRecord) -> u8 {
    match &record.status {
        RunStatus::Completed => 0,
        RunStatus::Failed { class, .. } => match class {
            FailureClass::Backend => EXIT_BACKEND,
            FailureClass::StageExhausted => EXIT_EXHAUSTED,
            FailureClass::Precondition | FailureClass::Io => EXIT_OTHER,
        },
    }
}

fn load_config(path: Option<&Path>) -> Result<config::Loaded, Failure> {
    let path = match path {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os("PROMPTLOOP_CONFIG")
            .map(PathBuf::from)
            .ok_or_else(|| Failure::config("no config file: pass --config or set PROMPTLOOP_CONFIG"))?,
    };
    config::load(&path).map_err(Failure::config)
}

fn pipeline_from(loaded: config::Loaded, out: &Path) -> Result<Pipeline, Failure> {
    Pipeline::new(loaded.backends, loaded.pipeline, out)
        .map(|p| p.with_templates(loaded.templates).with_keywords(loaded.keywords))
        .map_err(|e| Failure::config(e.to_string()))
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json values serialize"));
}

fn run(cli: Cli) -> Result<u8, Failure> {
    let mut loaded = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Optimize {
            prompt,
            out,
            rounds,
            seed,
            no_decorate,
        } => {
            if let Some(r) = rounds {
                loaded.pipeline.rounds = r;
            }
            if let Some(s) = seed {
                loaded.pipeline.seed = s;
            }
            if no_decorate {
                loaded.pipeline.decorate = false;
            }
            let p = pipeline_from(loaded, &out)?;
            let record = p.run_single(&prompt);
            let status = match &record.status {
                RunStatus::Completed => json!("completed"),
                RunStatus::Failed { stage, error, .. } => json!({"failed": stage, "error": error}),
            };
            print_json(&json!({
                "run_id": record.run_id,
                "status": status,
                "final_prompt": record.final_prompt(),
                "initial_score": record.initial_report().map(|r| r.score()),
                "final_score": record.final_report().map(|r| r.score()),
                "converged": record.converged,
                "record": record.run_dir.join(pipeline::RECORD_FILE),
            }));
            Ok(exit_code_for(&record))
        }
        Command::Reflect { prompt, image } => {
            let image = ImageRef::from_file(&image).map_err(Failure::other)?;
            let attempts = loaded.pipeline.build_attempts;
            let b = &loaded.backends;
            let graph = build_dsg(&prompt, b.llm.as_ref(), &loaded.templates, attempts)?;
            let report = evaluate_image(&image, &graph, b.vqa.as_ref())?;
            print_json(&serde_json::to_value(&report).expect("reports serialize"));
            Ok(0)
        }
        Command::Dsg { prompt } => {
            let attempts = loaded.pipeline.build_attempts;
            let graph = build_dsg(&prompt, loaded.backends.llm.as_ref(), &loaded.templates, attempts)?;
            print!("{}", serialize_graph(&graph));
            Ok(0)
        }
        Command::RunBench {
            dataset,
            out,
            mode,
            format,
            limit,
        } => {
            let mut items = bench::load_dataset(&dataset).map_err(|e| Failure::config(e.to_string()))?;
            if let Some(n) = limit {
                items.truncate(n);
            }
            let mode = match mode {
                ModeArg::Baseline => BenchMode::Baseline,
                ModeArg::Optimized => BenchMode::Optimized,
                ModeArg::Both => BenchMode::Both,
            };
            let (format, ext) = match format {
                FormatArg::Markdown => (ReportFormat::Markdown, "md"),
                FormatArg::Csv => (ReportFormat::Csv, "csv"),
            };
            let p = pipeline_from(loaded, &out.join("runs"))?;
            let report = bench::run_benchmark(&items, &p, mode);
            let table = bench::render_report(&report, format);
            fs::create_dir_all(&out).map_err(Failure::other)?;
            let json = serde_json::to_string_pretty(&report).expect("reports serialize");
            fs::write(out.join("report.json"), json + "\n").map_err(Failure::other)?;
            fs::write(out.join(format!("report.{ext}")), &table).map_err(Failure::other)?;
            print!("{table}");
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

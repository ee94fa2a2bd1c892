//! Configuration file.
//!
//! ```toml
//! [backends.llm]
//! kind = "http"
//! endpoint = "https://api.openai.com/v1"
//! model = "gpt-4o-mini"
//! api_key = "${OPENAI_API_KEY}"
//!
//! [backends.vqa]
//! kind = "http"
//! endpoint = "https://api.openai.com/v1"
//! model = "gpt-4o"
//! api_key = "${OPENAI_API_KEY}"
//!
//! [backends.t2i]
//! kind = "mock"
//! script = "scripts/t2i.json"
//!
//! [pipeline]
//! rounds = 1
//! seed = 7
//!
//! [templates]
//! dir = "my-templates"
//!
//! [keywords]
//! file = "keywords.json"
//! ```
//!
//! `${VAR}` in any string is replaced by the environment variable. Relative
//! paths resolve against the directory of the config file.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use promptloop::backends::{BackendConfig, HttpBackend, ModelBackend, ScriptedBackend};
use promptloop::optimizer::KeywordClassTable;
use promptloop::pipeline::{Backends, PipelineConfig};
use promptloop::templates::TemplateSet;
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendSpec {
    Http(BackendConfig),
    Mock { script: PathBuf },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSections {
    pub llm: BackendSpec,
    pub vqa: BackendSpec,
    pub t2i: BackendSpec,
    #[serde(default)]
    pub embed: Option<BackendSpec>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirSection {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSection {
    pub file: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub backends: BackendSections,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub templates: DirSection,
    #[serde(default)]
    pub keywords: FileSection,
}

/// A loaded configuration with everything built.
pub struct Loaded {
    pub backends: Backends,
    pub pipeline: PipelineConfig,
    pub templates: TemplateSet,
    pub keywords: KeywordClassTable,
}

/// Replaces `${NAME}` with `lookup(NAME)`. Unset variables are errors.
pub fn interpolate(text: &str, lookup: &dyn Fn(&str) -> Option<String>) -> Result<String, String> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find('}').ok_or_else(|| format!("unterminated `${{` in `{text}`"))?;
        let name = &after[..end];
        if name.is_empty() {
            return Err("empty variable name in `${}`".into());
        }
        let value = lookup(name).ok_or_else(|| format!("environment variable {name} is not set"))?;
        out.push_str(&value);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn interpolate_value(v: &mut toml::Value, lookup: &dyn Fn(&str) -> Option<String>) -> Result<(), String> {
    match v {
        toml::Value::String(s) => *s = interpolate(s, lookup)?,
        toml::Value::Array(items) => {
            for item in items {
                interpolate_value(item, lookup)?;
            }
        }
        toml::Value::Table(t) => {
            for (_, item) in t.iter_mut() {
                interpolate_value(item, lookup)?;
            }
        }
        _ => {}
    }
    Ok(())
}

pub fn parse_config(text: &str, lookup: &dyn Fn(&str) -> Option<String>) -> Result<FileConfig, String> {
    let mut value: toml::Value = toml::from_str(text).map_err(|e| e.to_string())?;
    interpolate_value(&mut value, lookup)?;
    value.try_into().map_err(|e: toml::de::Error| e.to_string())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn build_backend(role: &str, spec: &BackendSpec, base: &Path) -> Result<Arc<dyn ModelBackend>, String> {
    match spec {
        BackendSpec::Http(cfg) => HttpBackend::new(role, cfg.clone())
            .map(|b| Arc::new(b) as Arc<dyn ModelBackend>)
            .map_err(|e| format!("backends.{role}: {e}")),
        BackendSpec::Mock { script } => ScriptedBackend::from_script_file(&resolve(base, script))
            .map(|b| Arc::new(b) as Arc<dyn ModelBackend>)
            .map_err(|e| format!("backends.{role}: {e}")),
    }
}

pub fn load(path: &Path) -> Result<Loaded, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let cfg = parse_config(&text, &|name| std::env::var(name).ok()).map_err(|e| format!("{}: {e}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let b = &cfg.backends;
    let backends = Backends {
        llm: build_backend("llm", &b.llm, base)?,
        vqa: build_backend("vqa", &b.vqa, base)?,
        t2i: build_backend("t2i", &b.t2i, base)?,
        embed: b.embed.as_ref().map(|s| build_backend("embed", s, base)).transpose()?,
    };
    let mut templates = TemplateSet::bundled();
    if let Some(dir) = &cfg.templates.dir {
        templates = templates.overlay_dir(&resolve(base, dir)).map_err(|e| e.to_string())?;
    }
    let keywords = match &cfg.keywords.file {
        Some(f) => KeywordClassTable::load(&resolve(base, f)).map_err(|e| e.to_string())?,
        None => KeywordClassTable::default(),
    };
    cfg.pipeline.validate().map_err(|e| e.to_string())?;
    Ok(Loaded {
        backends,
        pipeline: cfg.pipeline,
        templates,
        keywords,
    })
}

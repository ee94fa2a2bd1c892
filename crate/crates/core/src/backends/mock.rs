//! Deterministic scripted backend.
//!
//! Script files are JSON:
//!
//! ```json
//! {
//!   "name": "llm",
//!   "synthesize_images": false,
//!   "embedding_dim": null,
//!   "rules": [
//!     { "op": "text", "label": "tuples", "input": "*motorcycle*",
//!       "reply": { "text": "1 | entity - whole (motorcycle)" } },
//!     { "op": "vqa", "input": "Is there a fence?*",
//!       "replies": [ { "text": "no" }, { "text": "yes" } ] },
//!     { "op": "text", "digest": "3f2a...",
//!       "reply": { "error": { "kind": "timeout" } } }
//!   ]
//! }
//! ```
//!
//! `op` is one of `text`, `vqa`, `image`, `embed`, `aesthetic`. A rule matches
//! when every matcher it sets agrees: `digest` (exact request digest), `label`
//! (exact request label, text only), `input` (glob over the text input,
//! question, image prompt or embed payload) and `image` (content digest of
//! the image under question, vqa and aesthetic only). Rules with a `digest` are tried
//! first, the rest in file order. With `replies`, successive identical
//! requests walk the list and then repeat its last entry.
//!
//! Reply forms: `{"text": ..}`, `{"image_base64": ..}`, `{"embedding": [..]}`,
//! `{"score": ..}` and `{"error": {"kind": .., "message": ..}}` where kind is
//! `transport`, `timeout`, `rate_limited`, `auth` or `content_rejected`.

use std::collections::HashMap;
use std::fs;
use std::io::Cursor;
use std::path::Path;
use std::sync::Mutex;

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::journal::{show_image, show_vector, CallDescription};
use super::types::{extension_for, sha256_hex};
use super::{
    BackendError, CallJournal, CallKind, EmbedPayload, ImageGenRequest, ImageRef, ModelBackend,
    TextGenRequest, VqaRequest,
};

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("cannot read script {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid script at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("bad glob `{pattern}`: {message}")]
    Pattern { pattern: String, message: String },
    #[error("rule {0} has no replies")]
    EmptyReplies(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Transport,
    Timeout,
    RateLimited,
    Auth,
    ContentRejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedFailure {
    pub kind: FailureKind,
    #[serde(default)]
    pub message: String,
}

impl From<&ScriptedFailure> for BackendError {
    fn from(f: &ScriptedFailure) -> Self {
        let message = f.message.clone();
        match f.kind {
            FailureKind::Transport => BackendError::Transport {
                status: None,
                message,
            },
            FailureKind::Timeout => BackendError::Timeout,
            FailureKind::RateLimited => BackendError::RateLimited { retry_after: None },
            FailureKind::Auth => BackendError::AuthFailure(message),
            FailureKind::ContentRejected => BackendError::ContentRejected(message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reply {
    Text(String),
    ImageBase64(String),
    Embedding(Vec<f64>),
    Score(f64),
    Error(ScriptedFailure),
}

impl Reply {
    pub fn text(s: impl Into<String>) -> Self {
        Reply::Text(s.into())
    }

    pub fn image(bytes: &[u8]) -> Self {
        Reply::ImageBase64(base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    pub fn failure(kind: FailureKind, message: impl Into<String>) -> Self {
        Reply::Error(ScriptedFailure {
            kind,
            message: message.into(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Rule {
    op: CallKind,
    digest: Option<String>,
    label: Option<String>,
    input: Option<glob::Pattern>,
    image: Option<String>,
    replies: Vec<Reply>,
}

impl Rule {
    pub fn new(op: CallKind) -> Self {
        Self {
            op,
            digest: None,
            label: None,
            input: None,
            image: None,
            replies: Vec::new(),
        }
    }

    pub fn text() -> Self {
        Self::new(CallKind::Text)
    }

    pub fn vqa() -> Self {
        Self::new(CallKind::Vqa)
    }

    pub fn image() -> Self {
        Self::new(CallKind::Image)
    }

    pub fn embed() -> Self {
        Self::new(CallKind::Embed)
    }

    pub fn aesthetic() -> Self {
        Self::new(CallKind::Aesthetic)
    }

    pub fn digest(mut self, digest: impl Into<String>) -> Self {
        self.digest = Some(digest.into());
        self
    }

    pub fn label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    /// Glob over the request input. Panics on an invalid pattern; use
    /// [`Rule::try_input`] for untrusted patterns.
    pub fn input(self, pattern: &str) -> Self {
        self.try_input(pattern).expect("valid glob pattern")
    }

    pub fn try_input(mut self, pattern: &str) -> Result<Self, ScriptError> {
        self.input = Some(glob::Pattern::new(pattern).map_err(|e| ScriptError::Pattern {
            pattern: pattern.to_string(),
            message: e.to_string(),
        })?);
        Ok(self)
    }

    /// Matches exactly `text`, with glob metacharacters escaped.
    pub fn input_exact(self, text: &str) -> Self {
        self.input(&glob::Pattern::escape(text))
    }

    /// Matches requests about the image with this content digest.
    pub fn image_digest(mut self, digest: impl Into<String>) -> Self {
        self.image = Some(digest.into());
        self
    }

    pub fn reply(mut self, reply: Reply) -> Self {
        self.replies.push(reply);
        self
    }

    pub fn replies(mut self, replies: impl IntoIterator<Item = Reply>) -> Self {
        self.replies.extend(replies);
        self
    }

    fn matches(&self, op: CallKind, key: &Key<'_>) -> bool {
        let Key { label, digest, input, image } = *key;
        self.op == op
            && self.image.as_deref().is_none_or(|i| i == image)
            && self.digest.as_deref().is_none_or(|d| d == digest)
            && self.label.as_deref().is_none_or(|l| l == label)
            && self.input.as_ref().is_none_or(|p| p.matches(input))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleSpec {
    op: CallKind,
    #[serde(default)]
    digest: Option<String>,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    input: Option<String>,
    #[serde(default)]
    image: Option<String>,
    #[serde(default)]
    reply: Option<Reply>,
    #[serde(default)]
    replies: Vec<Reply>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptSpec {
    #[serde(default = "default_name")]
    name: String,
    #[serde(default)]
    synthesize_images: bool,
    #[serde(default)]
    embedding_dim: Option<usize>,
    #[serde(default)]
    rules: Vec<RuleSpec>,
}

#[derive(Clone, Copy)]
struct Key<'a> {
    label: &'a str,
    digest: &'a str,
    input: &'a str,
    image: &'a str,
}

impl<'a> Key<'a> {
    fn new(label: &'a str, digest: &'a str, input: &'a str) -> Self {
        Self { label, digest, input, image: "" }
    }

    fn image(mut self, image: &'a str) -> Self {
        self.image = image;
        self
    }
}

fn default_name() -> String {
    "mock".into()
}

/// Mock backend whose responses are a pure function of the request digest
/// and how often that digest has been seen.
pub struct ScriptedBackend {
    name: String,
    rules: Vec<Rule>,
    cursors: Mutex<HashMap<(usize, String), usize>>,
    synthesize_images: bool,
    embedding_dim: Option<usize>,
    journal: CallJournal,
}

impl ScriptedBackend {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            rules: Vec::new(),
            cursors: Mutex::new(HashMap::new()),
            synthesize_images: false,
            embedding_dim: None,
            journal: CallJournal::new(),
        }
    }

    pub fn with_rule(mut self, rule: Rule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn with_rules(mut self, rules: impl IntoIterator<Item = Rule>) -> Self {
        self.rules.extend(rules);
        self
    }

    /// Unmatched image requests get a small PNG derived from the request digest.
    pub fn synthesize_images(mut self, on: bool) -> Self {
        self.synthesize_images = on;
        self
    }

    /// Enables embeddings with the given dimension.
    pub fn with_embedding_dim(mut self, dim: usize) -> Self {
        self.embedding_dim = Some(dim);
        self
    }

    pub fn from_script_str(text: &str) -> Result<Self, ScriptError> {
        let mut de = serde_json::Deserializer::from_str(text);
        let spec: ScriptSpec = serde_path_to_error::deserialize(&mut de).map_err(|e| ScriptError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        let mut backend = ScriptedBackend::new(spec.name).synthesize_images(spec.synthesize_images);
        backend.embedding_dim = spec.embedding_dim;
        for (i, r) in spec.rules.into_iter().enumerate() {
            let mut rule = Rule::new(r.op);
            rule.digest = r.digest;
            rule.label = r.label;
            rule.image = r.image;
            if let Some(pattern) = r.input {
                rule = rule.try_input(&pattern)?;
            }
            rule.replies = r.reply.into_iter().chain(r.replies).collect();
            if rule.replies.is_empty() {
                return Err(ScriptError::EmptyReplies(i));
            }
            backend.rules.push(rule);
        }
        Ok(backend)
    }

    pub fn from_script_file(path: &Path) -> Result<Self, ScriptError> {
        let text = fs::read_to_string(path).map_err(|e| ScriptError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_script_str(&text)
    }

    /// Forgets how often each request was seen and clears the journal.
    pub fn reset(&self) {
        self.cursors.lock().unwrap().clear();
        self.journal.clear();
    }

    fn lookup(&self, op: CallKind, key: Key<'_>) -> Result<Reply, BackendError> {
        let digest = key.digest;
        let by_digest = self
            .rules
            .iter()
            .enumerate()
            .filter(|(_, r)| r.digest.is_some());
        let others = self.rules.iter().enumerate().filter(|(_, r)| r.digest.is_none());
        let (index, rule) = by_digest
            .chain(others)
            .find(|(_, r)| r.matches(op, &key))
            .ok_or_else(|| BackendError::MockMiss {
                kind: op,
                digest: digest.to_string(),
            })?;
        if rule.replies.is_empty() {
            return Err(BackendError::MockMiss {
                kind: op,
                digest: digest.to_string(),
            });
        }
        let mut cursors = self.cursors.lock().unwrap();
        let seen = cursors.entry((index, digest.to_string())).or_insert(0);
        let reply = rule.replies[(*seen).min(rule.replies.len() - 1)].clone();
        *seen += 1;
        Ok(reply)
    }

    fn desc<'a>(&'a self, kind: CallKind, label: &'a str, digest: String, input: String) -> CallDescription<'a> {
        CallDescription {
            backend: &self.name,
            kind,
            label,
            digest,
            input,
        }
    }
}

fn unexpected(reply: &Reply, wanted: &str) -> BackendError {
    BackendError::InvalidResponse(format!("scripted reply {reply:?} is not {wanted}"))
}

fn synthesize_png(digest: &str) -> Vec<u8> {
    let seed = hex::decode(digest).unwrap_or_else(|_| digest.as_bytes().to_vec());
    let img = image::RgbImage::from_fn(8, 8, |x, y| {
        let i = (y * 8 + x) as usize;
        let at = |c: usize| seed[(3 * i + c) % seed.len()] ^ (i as u8);
        image::Rgb([at(0), at(1), at(2)])
    });
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .expect("in-memory png encoding");
    out.into_inner()
}

pub(crate) fn sniff_media_type(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(&[0xff, 0xd8, 0xff]) {
        "image/jpeg"
    } else if bytes.starts_with(b"RIFF") && bytes.get(8..12) == Some(b"WEBP") {
        "image/webp"
    } else if bytes.starts_with(b"GIF8") {
        "image/gif"
    } else {
        "image/png"
    }
}

pub(crate) fn write_image(bytes: &[u8], media_type: &str, dest_stem: &Path) -> Result<ImageRef, BackendError> {
    let path = dest_stem.with_extension(extension_for(media_type));
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(BackendError::io)?;
    }
    fs::write(&path, bytes).map_err(|e| BackendError::io(format!("{}: {e}", path.display())))?;
    Ok(ImageRef::local(path, bytes, media_type))
}

impl ModelBackend for ScriptedBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, req: &TextGenRequest) -> Result<String, BackendError> {
        req.validate()?;
        let digest = req.digest();
        self.journal.observe(
            self.desc(CallKind::Text, &req.label, digest.clone(), req.input.clone()),
            || match self.lookup(CallKind::Text, Key::new(&req.label, &digest, &req.input))? {
                Reply::Text(s) => Ok(s.trim_end().to_string()),
                Reply::Error(f) => Err((&f).into()),
                other => Err(unexpected(&other, "text")),
            },
            |s| s.clone(),
        )
    }

    fn ask(&self, req: &VqaRequest) -> Result<String, BackendError> {
        req.validate()?;
        let digest = req.digest();
        self.journal.observe(
            self.desc(CallKind::Vqa, "", digest.clone(), req.question.clone()),
            || match self.lookup(CallKind::Vqa, Key::new("", &digest, &req.question).image(req.image.identity()))? {
                Reply::Text(s) => Ok(s.trim_end().to_string()),
                Reply::Error(f) => Err((&f).into()),
                other => Err(unexpected(&other, "text")),
            },
            |s| s.clone(),
        )
    }

    fn generate_image(&self, req: &ImageGenRequest, dest_stem: &Path) -> Result<ImageRef, BackendError> {
        req.validate(self.max_image_side())?;
        let digest = req.digest();
        self.journal.observe(
            self.desc(CallKind::Image, "", digest.clone(), req.prompt.clone()),
            || {
                let bytes = match self.lookup(CallKind::Image, Key::new("", &digest, &req.prompt)) {
                    Ok(Reply::ImageBase64(b64)) => base64::engine::general_purpose::STANDARD
                        .decode(b64.trim())
                        .map_err(|e| BackendError::InvalidResponse(format!("bad base64 image: {e}")))?,
                    Ok(Reply::Error(f)) => return Err((&f).into()),
                    Ok(other) => return Err(unexpected(&other, "an image")),
                    Err(BackendError::MockMiss { .. }) if self.synthesize_images => synthesize_png(&digest),
                    Err(e) => return Err(e),
                };
                write_image(&bytes, sniff_media_type(&bytes), dest_stem)
            },
            show_image,
        )
    }

    fn embed(&self, payload: &EmbedPayload) -> Result<Vec<f64>, BackendError> {
        let Some(dim) = self.embedding_dim else {
            return Err(BackendError::CapabilityMissing("embeddings"));
        };
        let digest = payload.digest();
        self.journal.observe(
            self.desc(CallKind::Embed, "", digest.clone(), payload.summary()),
            || match self.lookup(CallKind::Embed, Key::new("", &digest, &payload.summary()))? {
                Reply::Embedding(v) if v.len() == dim => Ok(v),
                Reply::Embedding(v) => Err(BackendError::InvalidResponse(format!(
                    "embedding has dimension {}, expected {dim}",
                    v.len()
                ))),
                Reply::Error(f) => Err((&f).into()),
                other => Err(unexpected(&other, "an embedding")),
            },
            show_vector,
        )
    }

    fn aesthetic_score(&self, image: &ImageRef) -> Result<f64, BackendError> {
        let id = image.identity().to_string();
        self.journal.observe(
            self.desc(CallKind::Aesthetic, "", id.clone(), id.clone()),
            || match self.lookup(CallKind::Aesthetic, Key::new("", &id, &id).image(&id))? {
                Reply::Score(s) => Ok(s),
                Reply::Error(f) => Err((&f).into()),
                other => Err(unexpected(&other, "a score")),
            },
            |s| s.to_string(),
        )
    }

    fn max_image_side(&self) -> u32 {
        4096
    }

    fn journal(&self) -> &CallJournal {
        &self.journal
    }
}

/// Digest used by the mock for a byte string, exposed so tests can script
/// image rules by content.
pub fn content_digest(bytes: &[u8]) -> String {
    sha256_hex(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{answer_binary, BinaryAnswer};

    const ONE_PX_PNG: &str = "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAYAAAAfFcSJAAAADUlEQVR42mP8z8BQDwAEhQGAhKmMIQAAAABJRU5ErkJggg==";

    fn req(input: &str) -> TextGenRequest {
        TextGenRequest::new("tuples", "preamble", input)
    }

    #[test]
    fn scripted_by_digest() {
        let r = req("a cat");
        let mock = ScriptedBackend::new("llm")
            .with_rule(Rule::text().digest(r.digest()).reply(Reply::text("1 | entity - whole (cat)\n")));
        assert_eq!(mock.complete(&r).unwrap(), "1 | entity - whole (cat)");
        assert_eq!(mock.journal().len(), 1);
    }

    #[test]
    fn miss_names_the_digest() {
        let mock = ScriptedBackend::new("llm");
        let r = req("a dog");
        assert_eq!(
            mock.complete(&r),
            Err(BackendError::MockMiss {
                kind: CallKind::Text,
                digest: r.digest()
            })
        );
    }

    #[test]
    fn digest_rules_take_precedence() {
        let r = req("x");
        let mock = ScriptedBackend::new("llm")
            .with_rule(Rule::text().input("*").reply(Reply::text("glob")))
            .with_rule(Rule::text().digest(r.digest()).reply(Reply::text("digest")));
        assert_eq!(mock.complete(&r).unwrap(), "digest");
        assert_eq!(mock.complete(&req("y")).unwrap(), "glob");
    }

    #[test]
    fn reply_sequences_are_per_digest() {
        let mock = ScriptedBackend::new("llm").with_rule(
            Rule::text()
                .label("tuples")
                .replies([Reply::text("first"), Reply::text("second")]),
        );
        assert_eq!(mock.complete(&req("a")).unwrap(), "first");
        assert_eq!(mock.complete(&req("a")).unwrap(), "second");
        assert_eq!(mock.complete(&req("a")).unwrap(), "second");
        assert_eq!(mock.complete(&req("b")).unwrap(), "first");
        mock.reset();
        assert_eq!(mock.complete(&req("a")).unwrap(), "first");
        assert!(mock.journal().len() == 1);
    }

    #[test]
    fn preconditions_skip_the_journal() {
        let mock = ScriptedBackend::new("t2i").synthesize_images(true);
        let dir = tempfile::tempdir().unwrap();
        let err = mock
            .generate_image(&ImageGenRequest::new("", 1, 8, 8), &dir.path().join("x"))
            .unwrap_err();
        assert!(matches!(err, BackendError::Precondition(_)));
        assert!(mock.journal().is_empty());
    }

    #[test]
    fn scripted_image_is_written() {
        let bytes = base64::engine::general_purpose::STANDARD.decode(ONE_PX_PNG).unwrap();
        let mock = ScriptedBackend::new("t2i").with_rule(Rule::image().reply(Reply::image(&bytes)));
        let dir = tempfile::tempdir().unwrap();
        let img = mock
            .generate_image(&ImageGenRequest::new("cat", 1, 1, 1), &dir.path().join("images/round-1"))
            .unwrap();
        assert_eq!(img.path().unwrap(), dir.path().join("images/round-1.png"));
        assert_eq!(img.read_bytes().unwrap(), bytes);
        assert_eq!(img.identity(), content_digest(&bytes));
    }

    #[test]
    fn synthetic_images_are_deterministic() {
        let mock = ScriptedBackend::new("t2i").synthesize_images(true);
        let dir = tempfile::tempdir().unwrap();
        let r = ImageGenRequest::new("a red fox", 7, 512, 512);
        let a = mock.generate_image(&r, &dir.path().join("a")).unwrap();
        let b = mock.generate_image(&r, &dir.path().join("b")).unwrap();
        assert_eq!(a.identity(), b.identity());
        assert_eq!(a.read_bytes().unwrap(), b.read_bytes().unwrap());
        let c = mock
            .generate_image(&ImageGenRequest::new("a red fox", 8, 512, 512), &dir.path().join("c"))
            .unwrap();
        assert_ne!(a.identity(), c.identity());
        image::load_from_memory(&a.read_bytes().unwrap()).unwrap();
    }

    #[test]
    fn embedding_capability() {
        let without = ScriptedBackend::new("embed");
        assert_eq!(
            without.embed(&EmbedPayload::Text("cat".into())),
            Err(BackendError::CapabilityMissing("embeddings"))
        );
        assert!(without.journal().is_empty());
        let with = ScriptedBackend::new("embed")
            .with_embedding_dim(3)
            .with_rule(Rule::embed().input("cat").reply(Reply::Embedding(vec![1.0, 0.0, 0.0])));
        assert_eq!(with.embed(&EmbedPayload::Text("cat".into())).unwrap(), vec![1.0, 0.0, 0.0]);
    }

    fn image_file(dir: &Path) -> ImageRef {
        let bytes = base64::engine::general_purpose::STANDARD.decode(ONE_PX_PNG).unwrap();
        write_image(&bytes, "image/png", &dir.join("img")).unwrap()
    }

    #[test]
    fn binary_answers_and_reask() {
        let dir = tempfile::tempdir().unwrap();
        let img = image_file(dir.path());
        let mock = ScriptedBackend::new("vqa")
            .with_rule(Rule::vqa().input_exact("Is there a motorcycle?").reply(Reply::text("Yes, there is a motorcycle.")))
            .with_rule(Rule::vqa().input_exact("Is it red?").reply(Reply::text("no")))
            .with_rule(Rule::vqa().input("Is it big?*").reply(Reply::text("maybe")))
            .with_rule(Rule::vqa().input_exact("Is it blue?").reply(Reply::text("hmm")))
            .with_rule(Rule::vqa().input("Is it blue? *").reply(Reply::text("YES")));
        let ask = |q: &str| answer_binary(&mock, &VqaRequest::new(img.clone(), q));
        assert_eq!(ask("Is there a motorcycle?").unwrap(), BinaryAnswer::Yes);
        assert_eq!(ask("Is it red?").unwrap(), BinaryAnswer::No);
        assert_eq!(ask("Is it big?"), Err(BackendError::UnparseableAnswer("maybe".into())));
        assert_eq!(ask("Is it blue?").unwrap(), BinaryAnswer::Yes);
        // 1 + 1 + 2 + 2 transport calls
        assert_eq!(mock.journal().len(), 6);
    }

    #[test]
    fn vqa_needs_an_existing_image() {
        let mock = ScriptedBackend::new("vqa").with_rule(Rule::vqa().reply(Reply::text("yes")));
        let img = ImageRef::local("/nonexistent/x.png", b"", "image/png");
        assert!(matches!(
            mock.ask(&VqaRequest::new(img, "q?")),
            Err(BackendError::Precondition(_))
        ));
    }

    #[test]
    fn parses_script_files() {
        let script = format!(
            r#"{{
              "name": "all",
              "synthesize_images": true,
              "embedding_dim": 2,
              "rules": [
                {{ "op": "text", "label": "tuples", "reply": {{ "text": "ok" }} }},
                {{ "op": "vqa", "input": "Is there*", "replies": [ {{ "text": "no" }}, {{ "text": "yes" }} ] }},
                {{ "op": "image", "input": "fixed", "reply": {{ "image_base64": "{ONE_PX_PNG}" }} }},
                {{ "op": "embed", "input": "cat", "reply": {{ "embedding": [0.6, 0.8] }} }},
                {{ "op": "text", "label": "down", "reply": {{ "error": {{ "kind": "timeout" }} }} }}
              ]
            }}"#
        );
        let mock = ScriptedBackend::from_script_str(&script).unwrap();
        assert_eq!(mock.name(), "all");
        assert_eq!(mock.complete(&req("z")).unwrap(), "ok");
        assert_eq!(
            mock.complete(&TextGenRequest::new("down", "", "z")),
            Err(BackendError::Timeout)
        );
        assert_eq!(mock.embed(&EmbedPayload::Text("cat".into())).unwrap(), vec![0.6, 0.8]);

        let bad = r#"{ "rules": [ { "op": "text", "reply": { "txt": "x" } } ] }"#;
        let Err(ScriptError::Parse { path, .. }) = ScriptedBackend::from_script_str(bad) else {
            panic!("expected parse error");
        };
        assert_eq!(path, "rules[0].reply");
        let empty = r#"{ "rules": [ { "op": "text" } ] }"#;
        assert!(matches!(
            ScriptedBackend::from_script_str(empty),
            Err(ScriptError::EmptyReplies(0))
        ));
    }
}

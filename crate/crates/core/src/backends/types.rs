use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::BackendError;

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn digest_of<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("canonical request serializes"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub input: String,
    pub output: String,
}

/// A few-shot completion request.
#[derive(Debug, Clone, PartialEq)]
pub struct TextGenRequest {
    /// Free-form tag (e.g. the stage name). Journaled and usable by scripted
    /// rules; not sent to the service and not part of the digest.
    pub label: String,
    pub preamble: String,
    pub exemplars: Vec<Exemplar>,
    pub input: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl TextGenRequest {
    pub fn new(label: impl Into<String>, preamble: impl Into<String>, input: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            preamble: preamble.into(),
            exemplars: Vec::new(),
            input: input.into(),
            temperature: 0.0,
            max_tokens: 1024,
        }
    }

    pub fn with_exemplars(mut self, exemplars: Vec<Exemplar>) -> Self {
        self.exemplars = exemplars;
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.input.trim().is_empty() {
            return Err(BackendError::Precondition("empty input".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::Precondition(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::Precondition("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Stable digest over preamble, exemplars, input and temperature.
    pub fn digest(&self) -> String {
        #[derive(Serialize)]
        struct Canonical<'a> {
            kind: &'static str,
            preamble: &'a str,
            exemplars: &'a [Exemplar],
            input: &'a str,
            temperature: f64,
        }
        digest_of(&Canonical {
            kind: "text",
            preamble: &self.preamble,
            exemplars: &self.exemplars,
            input: &self.input,
            temperature: self.temperature,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageLocator {
    Local { path: PathBuf, sha256: String },
    Remote { id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub locator: ImageLocator,
    /// MIME type, e.g. `image/png`.
    pub media_type: String,
}

impl ImageRef {
    pub fn local(path: impl Into<PathBuf>, bytes: &[u8], media_type: impl Into<String>) -> Self {
        Self {
            locator: ImageLocator::Local {
                path: path.into(),
                sha256: sha256_hex(bytes),
            },
            media_type: media_type.into(),
        }
    }

    pub fn remote(id: impl Into<String>, media_type: impl Into<String>) -> Self {
        Self {
            locator: ImageLocator::Remote { id: id.into() },
            media_type: media_type.into(),
        }
    }

    /// Reads an existing image file, guessing the media type from its extension.
    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let bytes = fs::read(path).map_err(|e| BackendError::io(format!("{}: {e}", path.display())))?;
        let media_type = media_type_for(path);
        Ok(Self::local(path, &bytes, media_type))
    }

    /// Digest of the file contents, or the remote id.
    pub fn identity(&self) -> &str {
        match &self.locator {
            ImageLocator::Local { sha256, .. } => sha256,
            ImageLocator::Remote { id } => id,
        }
    }

    pub fn path(&self) -> Option<&Path> {
        match &self.locator {
            ImageLocator::Local { path, .. } => Some(path),
            ImageLocator::Remote { .. } => None,
        }
    }

    pub fn read_bytes(&self) -> Result<Vec<u8>, BackendError> {
        match &self.locator {
            ImageLocator::Local { path, .. } => {
                fs::read(path).map_err(|e| BackendError::io(format!("{}: {e}", path.display())))
            }
            ImageLocator::Remote { id } => Err(BackendError::Precondition(format!(
                "remote image {id} has no local bytes"
            ))),
        }
    }

    /// Rewrites a local path with `f`, leaving the digest untouched.
    pub fn map_path(&self, f: impl FnOnce(&Path) -> PathBuf) -> Self {
        match &self.locator {
            ImageLocator::Local { path, sha256 } => Self {
                locator: ImageLocator::Local {
                    path: f(path),
                    sha256: sha256.clone(),
                },
                media_type: self.media_type.clone(),
            },
            ImageLocator::Remote { .. } => self.clone(),
        }
    }
}

pub(crate) fn media_type_for(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        _ => "image/png",
    }
}

pub(crate) fn extension_for(media_type: &str) -> &'static str {
    match media_type {
        "image/jpeg" => "jpg",
        "image/webp" => "webp",
        "image/gif" => "gif",
        _ => "png",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VqaRequest {
    pub image: ImageRef,
    pub question: String,
}

impl VqaRequest {
    pub fn new(image: ImageRef, question: impl Into<String>) -> Self {
        Self {
            image,
            question: question.into(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.question.trim().is_empty() {
            return Err(BackendError::Precondition("empty question".into()));
        }
        if let Some(path) = self.image.path() {
            if !path.is_file() {
                return Err(BackendError::Precondition(format!(
                    "image {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        #[derive(Serialize)]
        struct Canonical<'a> {
            kind: &'static str,
            question: &'a str,
            image: &'a str,
        }
        digest_of(&Canonical {
            kind: "vqa",
            question: &self.question,
            image: self.image.identity(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageGenRequest {
    pub prompt: String,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    /// Passed through to the service unchanged.
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl ImageGenRequest {
    pub fn new(prompt: impl Into<String>, seed: u64, width: u32, height: u32) -> Self {
        Self {
            prompt: prompt.into(),
            seed,
            width,
            height,
            extra: BTreeMap::new(),
        }
    }

    pub fn validate(&self, max_side: u32) -> Result<(), BackendError> {
        if self.prompt.trim().is_empty() {
            return Err(BackendError::Precondition("empty prompt".into()));
        }
        for (name, side) in [("width", self.width), ("height", self.height)] {
            if side == 0 || side > max_side {
                return Err(BackendError::Precondition(format!(
                    "{name} {side} outside 1..={max_side}"
                )));
            }
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        #[derive(Serialize)]
        struct Canonical<'a> {
            kind: &'static str,
            prompt: &'a str,
            seed: u64,
            width: u32,
            height: u32,
        }
        digest_of(&Canonical {
            kind: "image",
            prompt: &self.prompt,
            seed: self.seed,
            width: self.width,
            height: self.height,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbedPayload {
    Text(String),
    Image(ImageRef),
}

impl EmbedPayload {
    /// Text, or `image:<identity>`; this is what scripted rules match against.
    pub fn summary(&self) -> String {
        match self {
            EmbedPayload::Text(t) => t.clone(),
            EmbedPayload::Image(img) => format!("image:{}", img.identity()),
        }
    }

    pub fn digest(&self) -> String {
        #[derive(Serialize)]
        struct Canonical<'a> {
            kind: &'static str,
            payload: &'a str,
        }
        let summary = self.summary();
        digest_of(&Canonical {
            kind: "embed",
            payload: &summary,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryAnswer {
    Yes,
    No,
}

impl BinaryAnswer {
    /// Looks only at the first run of alphabetic characters.
    pub fn parse(reply: &str) -> Option<Self> {
        let start = reply.find(char::is_alphabetic)?;
        let rest = &reply[start..];
        let end = rest.find(|c: char| !c.is_alphabetic()).unwrap_or(rest.len());
        let token = &rest[..end];
        if token.eq_ignore_ascii_case("yes") {
            Some(BinaryAnswer::Yes)
        } else if token.eq_ignore_ascii_case("no") {
            Some(BinaryAnswer::No)
        } else {
            None
        }
    }
}

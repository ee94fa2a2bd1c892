use std::fmt;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    BackendError, EmbedPayload, ImageGenRequest, ImageRef, ModelBackend, TextGenRequest, VqaRequest,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallKind {
    Text,
    Vqa,
    Image,
    Embed,
    Aesthetic,
}

impl fmt::Display for CallKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CallKind::Text => "text",
            CallKind::Vqa => "vqa",
            CallKind::Image => "image",
            CallKind::Embed => "embed",
            CallKind::Aesthetic => "aesthetic",
        })
    }
}

/// One backend invocation. Holds no credentials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallSummary {
    pub seq: usize,
    pub backend: String,
    pub kind: CallKind,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub label: String,
    pub digest: String,
    /// The request's variable part: text input, question, prompt or payload.
    pub input: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub latency_ms: u64,
}

/// Append-only, thread-safe call log.
#[derive(Debug, Default)]
pub struct CallJournal {
    entries: Mutex<Vec<CallSummary>>,
}

pub(crate) struct CallDescription<'a> {
    pub backend: &'a str,
    pub kind: CallKind,
    pub label: &'a str,
    pub digest: String,
    pub input: String,
}

impl CallJournal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> Vec<CallSummary> {
        self.entries.lock().unwrap().clone()
    }

    pub fn clear(&self) {
        self.entries.lock().unwrap().clear();
    }

    pub fn record(&self, mut entry: CallSummary) {
        let mut entries = self.entries.lock().unwrap();
        entry.seq = entries.len();
        entries.push(entry);
    }

    /// Runs `call` and journals its outcome. Requests rejected locally
    /// (`Precondition`, `CapabilityMissing`) never reached a transport and
    /// are not recorded.
    pub(crate) fn observe<T>(
        &self,
        desc: CallDescription<'_>,
        call: impl FnOnce() -> Result<T, BackendError>,
        show: impl FnOnce(&T) -> String,
    ) -> Result<T, BackendError> {
        let start = Instant::now();
        let result = call();
        if matches!(
            result,
            Err(BackendError::Precondition(_) | BackendError::CapabilityMissing(_))
        ) {
            return result;
        }
        let (output, error) = match &result {
            Ok(value) => (Some(show(value)), None),
            Err(e) => (None, Some(e.to_string())),
        };
        self.record(CallSummary {
            seq: 0,
            backend: desc.backend.to_string(),
            kind: desc.kind,
            label: desc.label.to_string(),
            digest: desc.digest,
            input: desc.input,
            output,
            error,
            latency_ms: start.elapsed().as_millis() as u64,
        });
        result
    }
}

pub(crate) fn show_image(img: &ImageRef) -> String {
    format!("{} {}", img.media_type, img.identity())
}

#[allow(clippy::ptr_arg)] // used as a formatter for Result<Vec<f64>>
pub(crate) fn show_vector(v: &Vec<f64>) -> String {
    format!("vector[{}]", v.len())
}

/// Delegates to a shared backend and mirrors every call into a separate
/// journal, so one run can audit its own calls while backends are shared.
pub struct JournaledBackend {
    inner: Arc<dyn ModelBackend>,
    role: String,
    journal: Arc<CallJournal>,
}

impl JournaledBackend {
    pub fn new(inner: Arc<dyn ModelBackend>, role: impl Into<String>, journal: Arc<CallJournal>) -> Self {
        Self {
            inner,
            role: role.into(),
            journal,
        }
    }

    fn desc<'a>(&'a self, kind: CallKind, label: &'a str, digest: String, input: String) -> CallDescription<'a> {
        CallDescription {
            backend: &self.role,
            kind,
            label,
            digest,
            input,
        }
    }
}

impl ModelBackend for JournaledBackend {
    fn name(&self) -> &str {
        &self.role
    }

    fn complete(&self, req: &TextGenRequest) -> Result<String, BackendError> {
        self.journal.observe(
            self.desc(CallKind::Text, &req.label, req.digest(), req.input.clone()),
            || self.inner.complete(req),
            |s| s.clone(),
        )
    }

    fn ask(&self, req: &VqaRequest) -> Result<String, BackendError> {
        self.journal.observe(
            self.desc(CallKind::Vqa, "", req.digest(), req.question.clone()),
            || self.inner.ask(req),
            |s| s.clone(),
        )
    }

    fn generate_image(&self, req: &ImageGenRequest, dest_stem: &Path) -> Result<ImageRef, BackendError> {
        self.journal.observe(
            self.desc(CallKind::Image, "", req.digest(), req.prompt.clone()),
            || self.inner.generate_image(req, dest_stem),
            show_image,
        )
    }

    fn embed(&self, payload: &EmbedPayload) -> Result<Vec<f64>, BackendError> {
        self.journal.observe(
            self.desc(CallKind::Embed, "", payload.digest(), payload.summary()),
            || self.inner.embed(payload),
            show_vector,
        )
    }

    fn aesthetic_score(&self, image: &ImageRef) -> Result<f64, BackendError> {
        self.journal.observe(
            self.desc(CallKind::Aesthetic, "", image.identity().to_string(), image.identity().to_string()),
            || self.inner.aesthetic_score(image),
            |s| s.to_string(),
        )
    }

    fn max_image_side(&self) -> u32 {
        self.inner.max_image_side()
    }

    fn journal(&self) -> &CallJournal {
        &self.journal
    }
}

//! Clients for the external model services.
//!
//! Every service sits behind [`ModelBackend`]: text completion, visual
//! question answering, image generation, and optional embedding and aesthetic
//! scoring. [`HttpBackend`] speaks the OpenAI-compatible wire format;
//! [`ScriptedBackend`] is a deterministic mock keyed by request digest.

mod config;
mod http;
mod journal;
mod mock;
mod rate;
mod types;

use std::path::Path;
use std::time::Duration;

use thiserror::Error;

pub use config::{BackendConfig, Secret};
pub use http::HttpBackend;
pub use journal::{CallJournal, CallKind, CallSummary, JournaledBackend};
pub use mock::{content_digest, FailureKind, Reply, Rule, ScriptError, ScriptedBackend, ScriptedFailure};
pub use rate::RateLimiter;
pub use types::{
    BinaryAnswer, EmbedPayload, Exemplar, ImageGenRequest, ImageLocator, ImageRef, TextGenRequest,
    VqaRequest,
};

/// Appended to the question when the first VQA reply had no yes/no token.
pub const STRICT_ANSWER_SUFFIX: &str = "Reply with exactly one word: yes or no.";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    /// The request was rejected locally and never reached the transport.
    #[error("invalid request: {0}")]
    Precondition(String),
    #[error("transport failure{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Transport { status: Option<u16>, message: String },
    #[error("rate limited{}", retry_after.map(|d| format!(", retry after {:?}", d)).unwrap_or_default())]
    RateLimited { retry_after: Option<Duration> },
    #[error("request timed out")]
    Timeout,
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    #[error("content rejected by service: {0}")]
    ContentRejected(String),
    #[error("could not read a yes/no answer from `{0}`")]
    UnparseableAnswer(String),
    #[error("backend does not support {0}")]
    CapabilityMissing(&'static str),
    #[error("no scripted {kind} response for digest {digest}")]
    MockMiss { kind: CallKind, digest: String },
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl BackendError {
    /// Errors worth another attempt under the retry policy.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport { status, .. } => match status {
                None => true,
                Some(s) => *s >= 500 || *s == 408,
            },
            BackendError::RateLimited { .. } | BackendError::Timeout => true,
            _ => false,
        }
    }

    pub(crate) fn io(err: impl std::fmt::Display) -> Self {
        BackendError::Io(err.to_string())
    }
}

/// A model service. Capabilities a backend lacks report
/// [`BackendError::CapabilityMissing`].
pub trait ModelBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Raw completion text with trailing whitespace stripped.
    fn complete(&self, req: &TextGenRequest) -> Result<String, BackendError> {
        let _ = req;
        Err(BackendError::CapabilityMissing("text completion"))
    }

    /// Raw free-text reply of a vision-language model. See [`answer_binary`].
    fn ask(&self, req: &VqaRequest) -> Result<String, BackendError> {
        let _ = req;
        Err(BackendError::CapabilityMissing("visual question answering"))
    }

    /// Generates an image and writes it next to `dest_stem`, adding the
    /// extension that matches the returned media type.
    fn generate_image(&self, req: &ImageGenRequest, dest_stem: &Path) -> Result<ImageRef, BackendError> {
        let _ = (req, dest_stem);
        Err(BackendError::CapabilityMissing("image generation"))
    }

    fn embed(&self, payload: &EmbedPayload) -> Result<Vec<f64>, BackendError> {
        let _ = payload;
        Err(BackendError::CapabilityMissing("embeddings"))
    }

    fn aesthetic_score(&self, image: &ImageRef) -> Result<f64, BackendError> {
        let _ = image;
        Err(BackendError::CapabilityMissing("aesthetic scoring"))
    }

    /// Largest accepted image side in pixels.
    fn max_image_side(&self) -> u32 {
        2048
    }

    fn journal(&self) -> &CallJournal;
}

/// Asks a yes/no question about an image.
///
/// The first alphabetic token of the reply is compared case-insensitively
/// against `yes` and `no`. If neither matches, the question is asked once more
/// with [`STRICT_ANSWER_SUFFIX`]; a second miss is
/// [`BackendError::UnparseableAnswer`].
pub fn answer_binary(backend: &dyn ModelBackend, req: &VqaRequest) -> Result<BinaryAnswer, BackendError> {
    let first = backend.ask(req)?;
    if let Some(answer) = BinaryAnswer::parse(&first) {
        return Ok(answer);
    }
    let strict = VqaRequest {
        image: req.image.clone(),
        question: format!("{} {}", req.question.trim_end(), STRICT_ANSWER_SUFFIX),
    };
    let second = backend.ask(&strict)?;
    BinaryAnswer::parse(&second).ok_or(BackendError::UnparseableAnswer(second))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retry_classes() {
        assert!(BackendError::Timeout.is_retryable());
        assert!(BackendError::RateLimited { retry_after: None }.is_retryable());
        assert!(BackendError::Transport { status: Some(503), message: String::new() }.is_retryable());
        assert!(BackendError::Transport { status: None, message: String::new() }.is_retryable());
        assert!(!BackendError::Transport { status: Some(400), message: String::new() }.is_retryable());
        assert!(!BackendError::AuthFailure(String::new()).is_retryable());
        assert!(!BackendError::ContentRejected(String::new()).is_retryable());
    }
}

//! OpenAI-compatible HTTP client.
//!
//! * `POST {endpoint}/chat/completions` for text and VQA (images go inline as
//!   base64 data URLs)
//! * `POST {endpoint}/images/generations` for image generation
//! * `POST {endpoint}/embeddings` for embeddings; image payloads are sent as
//!   `{"image": <data url>}` input objects, which CLIP-style servers accept

use std::path::Path;
use std::thread;
use std::time::Duration;

use base64::Engine;
use log::{debug, warn};
use serde_json::{json, Value};

use super::journal::{show_image, show_vector, CallDescription};
use super::mock::{sniff_media_type, write_image};
use super::{
    BackendConfig, BackendError, CallJournal, CallKind, EmbedPayload, ImageGenRequest, ImageLocator,
    ImageRef, ModelBackend, RateLimiter, TextGenRequest, VqaRequest,
};

const VQA_INSTRUCTION: &str = "Answer the question about the image with yes or no.";

pub struct HttpBackend {
    name: String,
    config: BackendConfig,
    client: reqwest::blocking::Client,
    limiter: RateLimiter,
    journal: CallJournal,
}

impl HttpBackend {
    pub fn new(name: impl Into<String>, config: BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| BackendError::Transport {
                status: None,
                message: e.to_string(),
            })?;
        Ok(Self {
            name: name.into(),
            limiter: RateLimiter::new(config.rate_limit),
            config,
            client,
            journal: CallJournal::new(),
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.endpoint.trim_end_matches('/'), path)
    }

    fn send_once(&self, url: &str, body: &Value) -> Result<Value, BackendError> {
        self.limiter.acquire();
        let mut request = self.client.post(url).json(body);
        if let Some(key) = self.config.api_key.as_ref().filter(|k| !k.is_empty()) {
            request = request.bearer_auth(key.expose());
        }
        let response = request.send().map_err(transport_error)?;
        let status = response.status();
        let retry_after = response
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .map(Duration::from_secs_f64);
        let text = response.text().map_err(transport_error)?;
        if status.is_success() {
            return serde_json::from_str(&text)
                .map_err(|e| BackendError::InvalidResponse(format!("{e}: {}", excerpt(&text))));
        }
        Err(match status.as_u16() {
            401 | 403 => BackendError::AuthFailure(format!("HTTP {status}: {}", excerpt(&text))),
            429 => BackendError::RateLimited { retry_after },
            400 if is_content_refusal(&text) => BackendError::ContentRejected(excerpt(&text)),
            code => BackendError::Transport {
                status: Some(code),
                message: excerpt(&text),
            },
        })
    }

    /// Sends with retries on retryable errors and exponential backoff.
    fn post_json(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let url = self.url(path);
        let mut attempt = 0;
        loop {
            match self.send_once(&url, body) {
                Ok(value) => return Ok(value),
                Err(err) if err.is_retryable() && attempt < self.config.max_retries => {
                    let delay = match &err {
                        BackendError::RateLimited {
                            retry_after: Some(after),
                        } => *after,
                        _ => self.config.backoff(attempt),
                    };
                    warn!("{}: {err}; retrying in {delay:?}", self.name);
                    thread::sleep(delay);
                    attempt += 1;
                }
                Err(err) => return Err(err),
            }
        }
    }

    fn get_bytes(&self, url: &str) -> Result<(Vec<u8>, Option<String>), BackendError> {
        let response = self.client.get(url).send().map_err(transport_error)?;
        let status = response.status();
        if !status.is_success() {
            return Err(BackendError::Transport {
                status: Some(status.as_u16()),
                message: format!("fetching {url}"),
            });
        }
        let media_type = response
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .map(|v| v.split(';').next().unwrap_or(v).trim().to_string());
        let bytes = response.bytes().map_err(transport_error)?;
        Ok((bytes.to_vec(), media_type))
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

fn transport_error(err: reqwest::Error) -> BackendError {
    if err.is_timeout() {
        BackendError::Timeout
    } else {
        BackendError::Transport {
            status: err.status().map(|s| s.as_u16()),
            message: err.without_url().to_string(),
        }
    }
}

fn excerpt(text: &str) -> String {
    const LIMIT: usize = 300;
    match text.char_indices().nth(LIMIT) {
        Some((cut, _)) => format!("{}...", &text[..cut]),
        None => text.to_string(),
    }
}

fn is_content_refusal(body: &str) -> bool {
    let lower = body.to_ascii_lowercase();
    ["content_policy", "content_filter", "safety system", "nsfw"]
        .iter()
        .any(|needle| lower.contains(needle))
}

fn data_url(image: &ImageRef) -> Result<String, BackendError> {
    match &image.locator {
        ImageLocator::Remote { id } => Ok(id.clone()),
        ImageLocator::Local { .. } => {
            let bytes = image.read_bytes()?;
            Ok(format!(
                "data:{};base64,{}",
                image.media_type,
                base64::engine::general_purpose::STANDARD.encode(bytes)
            ))
        }
    }
}

pub(crate) fn chat_messages(req: &TextGenRequest) -> Vec<Value> {
    let mut messages = Vec::with_capacity(2 + 2 * req.exemplars.len());
    if !req.preamble.trim().is_empty() {
        messages.push(json!({ "role": "system", "content": req.preamble }));
    }
    for ex in &req.exemplars {
        messages.push(json!({ "role": "user", "content": ex.input }));
        messages.push(json!({ "role": "assistant", "content": ex.output }));
    }
    messages.push(json!({ "role": "user", "content": req.input }));
    messages
}

fn chat_content(response: &Value) -> Result<String, BackendError> {
    let content = &response["choices"][0]["message"]["content"];
    let text = match content {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join(""),
        _ => {
            return Err(BackendError::InvalidResponse(format!(
                "no message content in {}",
                excerpt(&response.to_string())
            )))
        }
    };
    Ok(text.trim_end().to_string())
}

impl ModelBackend for HttpBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, req: &TextGenRequest) -> Result<String, BackendError> {
        req.validate()?;
        let body = json!({
            "model": self.config.model,
            "messages": chat_messages(req),
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        self.journal.observe(
            self.desc(CallKind::Text, &req.label, req.digest(), req.input.clone()),
            || {
                debug!("{}: completion `{}`", self.name, req.label);
                chat_content(&self.post_json("chat/completions", &body)?)
            },
            |s| s.clone(),
        )
    }

    fn ask(&self, req: &VqaRequest) -> Result<String, BackendError> {
        req.validate()?;
        let url = data_url(&req.image)?;
        let body = json!({
            "model": self.config.model,
            "messages": [
                { "role": "system", "content": VQA_INSTRUCTION },
                { "role": "user", "content": [
                    { "type": "text", "text": req.question },
                    { "type": "image_url", "image_url": { "url": url } },
                ]},
            ],
            "temperature": 0.0,
            "max_tokens": 32,
        });
        self.journal.observe(
            self.desc(CallKind::Vqa, "", req.digest(), req.question.clone()),
            || chat_content(&self.post_json("chat/completions", &body)?),
            |s| s.clone(),
        )
    }

    fn generate_image(&self, req: &ImageGenRequest, dest_stem: &Path) -> Result<ImageRef, BackendError> {
        req.validate(self.max_image_side())?;
        let mut body = json!({
            "model": self.config.model,
            "prompt": req.prompt,
            "n": 1,
            "size": format!("{}x{}", req.width, req.height),
            "seed": req.seed,
            "response_format": "b64_json",
        });
        for (k, v) in &req.extra {
            body[k] = v.clone();
        }
        self.journal.observe(
            self.desc(CallKind::Image, "", req.digest(), req.prompt.clone()),
            || {
                let response = self.post_json("images/generations", &body)?;
                let item = &response["data"][0];
                let (bytes, media_type) = if let Some(b64) = item["b64_json"].as_str() {
                    let bytes = base64::engine::general_purpose::STANDARD
                        .decode(b64.trim())
                        .map_err(|e| BackendError::InvalidResponse(format!("bad base64 image: {e}")))?;
                    (bytes, None)
                } else if let Some(url) = item["url"].as_str() {
                    self.get_bytes(url)?
                } else {
                    return Err(BackendError::InvalidResponse(format!(
                        "no image in {}",
                        excerpt(&response.to_string())
                    )));
                };
                let media_type = media_type
                    .filter(|m| m.starts_with("image/"))
                    .unwrap_or_else(|| sniff_media_type(&bytes).to_string());
                write_image(&bytes, &media_type, dest_stem)
            },
            show_image,
        )
    }

    fn embed(&self, payload: &EmbedPayload) -> Result<Vec<f64>, BackendError> {
        let input = match payload {
            EmbedPayload::Text(t) => json!(t),
            EmbedPayload::Image(img) => json!([{ "image": data_url(img)? }]),
        };
        let body = json!({ "model": self.config.model, "input": input });
        self.journal.observe(
            self.desc(CallKind::Embed, "", payload.digest(), payload.summary()),
            || {
                let response = self.post_json("embeddings", &body)?;
                response["data"][0]["embedding"]
                    .as_array()
                    .and_then(|xs| xs.iter().map(Value::as_f64).collect::<Option<Vec<_>>>())
                    .ok_or_else(|| BackendError::InvalidResponse("no embedding vector".into()))
            },
            show_vector,
        )
    }

    fn max_image_side(&self) -> u32 {
        self.config.max_image_side
    }

    fn journal(&self) -> &CallJournal {
        &self.journal
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{Exemplar, Secret};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::{TcpListener, TcpStream};
    use std::sync::{Arc, Mutex};

    struct Canned {
        status: u16,
        body: String,
        headers: Vec<(String, String)>,
        delay: Duration,
    }

    fn ok(body: Value) -> Canned {
        Canned {
            status: 200,
            body: body.to_string(),
            headers: vec![],
            delay: Duration::ZERO,
        }
    }

    fn status(code: u16, body: &str) -> Canned {
        Canned {
            status: code,
            body: body.to_string(),
            headers: vec![],
            delay: Duration::ZERO,
        }
    }

    #[derive(Debug, Clone)]
    struct Seen {
        path: String,
        authorization: Option<String>,
        body: Value,
    }

    /// Serves the canned responses in order (repeating the last), recording
    /// every request. Returns the base URL and the request log.
    fn serve(responses: Vec<Canned>) -> (String, Arc<Mutex<Vec<Seen>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base = format!("http://{}/v1", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&seen);
        thread::spawn(move || {
            for (i, stream) in listener.incoming().enumerate() {
                let Ok(stream) = stream else { break };
                let canned = &responses[i.min(responses.len() - 1)];
                if let Some(req) = read_request(&stream) {
                    log.lock().unwrap().push(req);
                }
                thread::sleep(canned.delay);
                respond(stream, canned);
            }
        });
        (base, seen)
    }

    fn read_request(stream: &TcpStream) -> Option<Seen> {
        let mut reader = BufReader::new(stream.try_clone().ok()?);
        let mut line = String::new();
        reader.read_line(&mut line).ok()?;
        let path = line.split_whitespace().nth(1)?.to_string();
        let mut length = 0;
        let mut authorization = None;
        loop {
            let mut header = String::new();
            reader.read_line(&mut header).ok()?;
            let header = header.trim_end();
            if header.is_empty() {
                break;
            }
            let (name, value) = header.split_once(':')?;
            match name.to_ascii_lowercase().as_str() {
                "content-length" => length = value.trim().parse().ok()?,
                "authorization" => authorization = Some(value.trim().to_string()),
                _ => {}
            }
        }
        let mut body = vec![0; length];
        reader.read_exact(&mut body).ok()?;
        Some(Seen {
            path,
            authorization,
            body: serde_json::from_slice(&body).unwrap_or(Value::Null),
        })
    }

    fn respond(mut stream: TcpStream, canned: &Canned) {
        let mut head = format!(
            "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
            canned.status,
            canned.body.len()
        );
        for (k, v) in &canned.headers {
            head.push_str(&format!("{k}: {v}\r\n"));
        }
        head.push_str("\r\n");
        let _ = stream.write_all(head.as_bytes());
        let _ = stream.write_all(canned.body.as_bytes());
    }

    fn chat(text: &str) -> Canned {
        ok(json!({ "choices": [ { "message": { "role": "assistant", "content": text } } ] }))
    }

    fn backend(base: &str, retries: u32) -> HttpBackend {
        let mut cfg = BackendConfig::new(base, "qwen2");
        cfg.max_retries = retries;
        cfg.backoff_ms = 1;
        cfg.timeout_secs = 5.0;
        cfg.api_key = Some(Secret::new("sk-test-secret"));
        HttpBackend::new("llm", cfg).unwrap()
    }

    #[test]
    fn completion_wire_format() {
        let (base, seen) = serve(vec![chat("1 | entity - whole (cat)\n\n")]);
        let be = backend(&base, 0);
        let req = TextGenRequest::new("tuples", "Decompose.", "a cat").with_exemplars(vec![Exemplar {
            input: "a dog".into(),
            output: "1 | entity - whole (dog)".into(),
        }]);
        assert_eq!(be.complete(&req).unwrap(), "1 | entity - whole (cat)");
        let seen = seen.lock().unwrap();
        assert_eq!(seen[0].path, "/v1/chat/completions");
        assert_eq!(seen[0].authorization.as_deref(), Some("Bearer sk-test-secret"));
        let messages = seen[0].body["messages"].as_array().unwrap();
        let roles: Vec<_> = messages.iter().map(|m| m["role"].as_str().unwrap()).collect();
        assert_eq!(roles, ["system", "user", "assistant", "user"]);
        assert_eq!(messages[3]["content"], "a cat");
        assert_eq!(seen[0].body["model"], "qwen2");

        let journal = serde_json::to_string(&be.journal().entries()).unwrap();
        assert!(!journal.contains("sk-test-secret"));
        assert_eq!(be.journal().len(), 1);
    }

    #[test]
    fn retries_then_succeeds() {
        let (base, seen) = serve(vec![status(503, "busy"), status(502, "busy"), chat("done")]);
        let be = backend(&base, 3);
        assert_eq!(be.complete(&TextGenRequest::new("", "", "x")).unwrap(), "done");
        assert_eq!(seen.lock().unwrap().len(), 3);
        assert_eq!(be.journal().len(), 1);
    }

    #[test]
    fn gives_up_after_max_retries() {
        let (base, seen) = serve(vec![status(500, "boom")]);
        let be = backend(&base, 2);
        let err = be.complete(&TextGenRequest::new("", "", "x")).unwrap_err();
        assert!(matches!(err, BackendError::Transport { status: Some(500), .. }));
        assert_eq!(seen.lock().unwrap().len(), 3);
    }

    #[test]
    fn unreachable_endpoint_is_transport_error() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let be = backend(&format!("http://127.0.0.1:{port}/v1"), 2);
        let err = be.complete(&TextGenRequest::new("", "", "x")).unwrap_err();
        assert!(matches!(err, BackendError::Transport { status: None, .. }), "{err:?}");
        assert_eq!(be.journal().entries()[0].error.as_deref(), Some(err.to_string().as_str()));
    }

    #[test]
    fn auth_failures_are_not_retried() {
        let (base, seen) = serve(vec![status(401, "{\"error\": \"bad key\"}")]);
        let be = backend(&base, 3);
        assert!(matches!(
            be.complete(&TextGenRequest::new("", "", "x")),
            Err(BackendError::AuthFailure(_))
        ));
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn honors_retry_after() {
        let mut limited = status(429, "slow down");
        limited.headers.push(("Retry-After".into(), "0".into()));
        let (base, seen) = serve(vec![limited, chat("fine")]);
        let be = backend(&base, 1);
        assert_eq!(be.complete(&TextGenRequest::new("", "", "x")).unwrap(), "fine");
        assert_eq!(seen.lock().unwrap().len(), 2);
    }

    #[test]
    fn times_out() {
        let mut slow = chat("late");
        slow.delay = Duration::from_millis(1500);
        let (base, _) = serve(vec![slow]);
        let mut cfg = BackendConfig::new(&base, "m");
        cfg.timeout_secs = 0.2;
        cfg.max_retries = 0;
        let be = HttpBackend::new("llm", cfg).unwrap();
        assert_eq!(be.complete(&TextGenRequest::new("", "", "x")), Err(BackendError::Timeout));
    }

    #[test]
    fn vqa_sends_data_url() {
        let dir = tempfile::tempdir().unwrap();
        let img = write_image(b"\x89PNG fake", "image/png", &dir.path().join("img")).unwrap();
        let (base, seen) = serve(vec![chat("Yes.")]);
        let be = backend(&base, 0);
        let reply = be.ask(&VqaRequest::new(img, "Is there a cat?")).unwrap();
        assert_eq!(reply, "Yes.");
        let seen = seen.lock().unwrap();
        let parts = &seen[0].body["messages"][1]["content"];
        assert_eq!(parts[0]["text"], "Is there a cat?");
        let url = parts[1]["image_url"]["url"].as_str().unwrap();
        assert!(url.starts_with("data:image/png;base64,"));
    }

    #[test]
    fn image_generation_writes_file() {
        let png = b"\x89PNG\r\n\x1a\nrest".to_vec();
        let b64 = base64::engine::general_purpose::STANDARD.encode(&png);
        let (base, seen) = serve(vec![ok(json!({ "data": [ { "b64_json": b64 } ] }))]);
        let be = backend(&base, 0);
        let dir = tempfile::tempdir().unwrap();
        let mut req = ImageGenRequest::new("a red fox", 42, 512, 768);
        req.extra.insert("steps".into(), json!(30));
        let img = be.generate_image(&req, &dir.path().join("images/round-1")).unwrap();
        assert_eq!(img.read_bytes().unwrap(), png);
        assert!(img.path().unwrap().ends_with("images/round-1.png"));
        let seen = seen.lock().unwrap();
        assert_eq!(seen[0].path, "/v1/images/generations");
        assert_eq!(seen[0].body["size"], "512x768");
        assert_eq!(seen[0].body["seed"], 42);
        assert_eq!(seen[0].body["steps"], 30);
    }

    #[test]
    fn content_rejection() {
        let (base, _) = serve(vec![status(400, "{\"error\": {\"code\": \"content_policy_violation\"}}")]);
        let be = backend(&base, 2);
        let dir = tempfile::tempdir().unwrap();
        let err = be
            .generate_image(&ImageGenRequest::new("x", 1, 64, 64), &dir.path().join("a"))
            .unwrap_err();
        assert!(matches!(err, BackendError::ContentRejected(_)));
    }

    #[test]
    fn embeddings() {
        let (base, seen) = serve(vec![ok(json!({ "data": [ { "embedding": [0.6, 0.8] } ] }))]);
        let be = backend(&base, 0);
        assert_eq!(be.embed(&EmbedPayload::Text("cat".into())).unwrap(), vec![0.6, 0.8]);
        assert_eq!(seen.lock().unwrap()[0].path, "/v1/embeddings");
    }

    #[test]
    fn empty_prompt_never_hits_the_network() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let be = backend(&format!("http://127.0.0.1:{port}/v1"), 0);
        let dir = tempfile::tempdir().unwrap();
        let err = be
            .generate_image(&ImageGenRequest::new("  ", 1, 64, 64), &dir.path().join("a"))
            .unwrap_err();
        assert!(matches!(err, BackendError::Precondition(_)));
        assert!(be.journal().is_empty());
    }
}

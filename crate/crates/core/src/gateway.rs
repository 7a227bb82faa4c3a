//! Access to a vision-capable chat model.
//!
//! [`Gateway`] wraps any [`VisionBackend`] with the retry loop, latency
//! bookkeeping and precondition checks. Two backends ship with the crate:
//!
//! - [`OpenAiCompatBackend`] posts to `<base_url>/chat/completions` with the
//!   prompt and a base64 `data:` URI of the image.
//! - [`MockBackend`] replays a fixture keyed by `scene_id|prompt_id|run_idx`.
//!
//! Only transport faults (timeouts, connection errors, 5xx) and rate limits
//! are retried. A well-formed model reply is returned as-is, whatever it says.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::perception::PromptId;

pub const API_KEY_ENV: &str = "FOVLINK_API_KEY";
pub const BASE_URL_ENV: &str = "FOVLINK_BASE_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryParams {
    pub model_name: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff_base: Duration,
}

impl Default for QueryParams {
    fn default() -> Self {
        Self {
            model_name: "gpt-4o".into(),
            max_tokens: 300,
            temperature: 0.0,
            timeout: Duration::from_secs(60),
            max_retries: 3,
            backoff_base: Duration::from_secs(1),
        }
    }
}

impl QueryParams {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_tokens must be at least 1",
            ));
        }
        if self.timeout.is_zero() {
            return Err(GatewayError::InvalidRequest("timeout must be positive"));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidRequest(
                "temperature must be a finite number >= 0",
            ));
        }
        Ok(())
    }

    /// Delay before retry number `retry` (1-based): `backoff_base * 2^(retry-1)`.
    pub fn backoff(&self, retry: u32) -> Duration {
        self.backoff_base
            .saturating_mul(1u32 << (retry.saturating_sub(1)).min(16))
    }
}

/// Identifies one query within an experiment.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QueryKey {
    pub scene_id: String,
    pub prompt_id: PromptId,
    pub run_idx: u32,
}

impl QueryKey {
    pub fn new(scene_id: impl Into<String>, prompt_id: PromptId, run_idx: u32) -> Self {
        Self {
            scene_id: scene_id.into(),
            prompt_id,
            run_idx,
        }
    }
}

impl fmt::Display for QueryKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}|{}", self.scene_id, self.prompt_id, self.run_idx)
    }
}

pub struct VisionRequest<'a> {
    pub key: &'a QueryKey,
    pub image: &'a [u8],
    pub prompt: &'a str,
    pub params: &'a QueryParams,
}

/// Outcome of a single backend attempt that produced no reply text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendFault {
    Timeout,
    RateLimited,
    Transport(String),
    /// Reached the backend but the reply could not be read. Not retried.
    Malformed(String),
    /// Refused by the backend for a reason retrying cannot fix (auth, bad request).
    Rejected(String),
    /// Mock only: the fixture has no entry for the key.
    Unscripted(String),
}

impl BackendFault {
    fn retryable(&self) -> bool {
        matches!(
            self,
            BackendFault::Timeout | BackendFault::RateLimited | BackendFault::Transport(_)
        )
    }
}

impl fmt::Display for BackendFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendFault::Timeout => f.write_str("timeout"),
            BackendFault::RateLimited => f.write_str("rate_limit"),
            BackendFault::Transport(m) => write!(f, "transport: {m}"),
            BackendFault::Malformed(m) => write!(f, "malformed reply: {m}"),
            BackendFault::Rejected(m) => write!(f, "rejected: {m}"),
            BackendFault::Unscripted(k) => write!(f, "unscripted key {k}"),
        }
    }
}

pub trait VisionBackend: Send + Sync {
    fn id(&self) -> &str;

    /// Performs one attempt. `attempt` starts at 1.
    fn complete(&self, request: &VisionRequest<'_>, attempt: u32) -> Result<String, BackendFault>;

    /// Replays recorded data; wall-clock latencies are reported as zero.
    fn is_scripted(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: u32,
    pub outcome: String,
    pub latency_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResponse {
    pub text: String,
    /// Seconds around the whole retry loop, backoff included.
    pub latency: f64,
    pub attempt_count: u32,
    pub backend_id: String,
    pub attempts: Vec<AttemptRecord>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(&'static str),
    #[error("timed out after {} attempt(s)", .transcript.len())]
    Timeout { transcript: Vec<AttemptRecord> },
    #[error("rate limited on all {} attempt(s)", .transcript.len())]
    RateLimitedExhausted { transcript: Vec<AttemptRecord> },
    #[error("transport error after {} attempt(s)", .transcript.len())]
    TransportError { transcript: Vec<AttemptRecord> },
    #[error("backend reply could not be read")]
    MalformedBackendReply { transcript: Vec<AttemptRecord> },
    #[error("no scripted reply for key {0}")]
    UnscriptedKey(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl GatewayError {
    pub fn transcript(&self) -> &[AttemptRecord] {
        match self {
            GatewayError::Timeout { transcript }
            | GatewayError::RateLimitedExhausted { transcript }
            | GatewayError::TransportError { transcript }
            | GatewayError::MalformedBackendReply { transcript } => transcript,
            _ => &[],
        }
    }

    /// Short name stored in result files.
    pub fn fault_name(&self) -> &'static str {
        match self {
            GatewayError::Timeout { .. } => "timeout",
            GatewayError::RateLimitedExhausted { .. } => "rate_limit",
            GatewayError::TransportError { .. } => "transport",
            GatewayError::MalformedBackendReply { .. } => "malformed",
            GatewayError::InvalidRequest(_) => "invalid_request",
            GatewayError::UnscriptedKey(_) => "unscripted",
            GatewayError::Config(_) => "config",
        }
    }

    /// True for errors that describe a single query's fate rather than a
    /// broken setup.
    pub fn is_query_fault(&self) -> bool {
        matches!(
            self,
            GatewayError::Timeout { .. }
                | GatewayError::RateLimitedExhausted { .. }
                | GatewayError::TransportError { .. }
                | GatewayError::MalformedBackendReply { .. }
        )
    }
}

/// Shareable front door to a backend. Retry state lives on the stack of each
/// call, so one gateway can serve many threads.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn VisionBackend>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.id())
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn VisionBackend>) -> Self {
        Self { backend }
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn is_scripted(&self) -> bool {
        self.backend.is_scripted()
    }

    pub fn send_vision_query(
        &self,
        key: &QueryKey,
        image: &[u8],
        prompt: &str,
        params: &QueryParams,
    ) -> Result<RawResponse, GatewayError> {
        if image.is_empty() {
            return Err(GatewayError::InvalidRequest("image payload is empty"));
        }
        if prompt.is_empty() {
            return Err(GatewayError::InvalidRequest("prompt is empty"));
        }
        params.validate()?;

        let scripted = self.backend.is_scripted();
        let elapsed = |t: Instant| {
            if scripted {
                0.0
            } else {
                t.elapsed().as_secs_f64()
            }
        };
        let request = VisionRequest {
            key,
            image,
            prompt,
            params,
        };
        let started = Instant::now();
        let mut transcript = Vec::new();
        let mut attempt = 1;
        loop {
            let t = Instant::now();
            let result = self.backend.complete(&request, attempt);
            let outcome = match &result {
                Ok(_) => "ok".to_string(),
                Err(f) => f.to_string(),
            };
            transcript.push(AttemptRecord {
                attempt,
                outcome,
                latency_s: elapsed(t),
            });
            let fault = match result {
                Ok(text) => {
                    return Ok(RawResponse {
                        text,
                        latency: elapsed(started),
                        attempt_count: attempt,
                        backend_id: self.backend.id().to_string(),
                        attempts: transcript,
                    })
                }
                Err(fault) => fault,
            };
            if fault.retryable() && attempt <= params.max_retries {
                if !scripted {
                    std::thread::sleep(params.backoff(attempt));
                }
                attempt += 1;
                continue;
            }
            return Err(match fault {
                BackendFault::Timeout => GatewayError::Timeout { transcript },
                BackendFault::RateLimited => GatewayError::RateLimitedExhausted { transcript },
                BackendFault::Transport(_) | BackendFault::Rejected(_) => {
                    GatewayError::TransportError { transcript }
                }
                BackendFault::Malformed(_) => GatewayError::MalformedBackendReply { transcript },
                BackendFault::Unscripted(k) => GatewayError::UnscriptedKey(k),
            });
        }
    }
}

// ---------------------------------------------------------------------------
// Live backend

/// Client for any server speaking the OpenAI chat-completions protocol.
pub struct OpenAiCompatBackend {
    agent: ureq::Agent,
    base_url: String,
    api_key: String,
}

impl OpenAiCompatBackend {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
        }
    }

    /// Reads the base URL and bearer token from `FOVLINK_BASE_URL` and
    /// `FOVLINK_API_KEY`.
    pub fn from_env() -> Result<Self, GatewayError> {
        let base = std::env::var(BASE_URL_ENV)
            .map_err(|_| GatewayError::Config(format!("{BASE_URL_ENV} is not set")))?;
        let key = std::env::var(API_KEY_ENV)
            .map_err(|_| GatewayError::Config(format!("{API_KEY_ENV} is not set")))?;
        Ok(Self::new(base, key))
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }
}

/// JSON body for one chat-completions call carrying the prompt and image.
pub fn build_request_body(request: &VisionRequest<'_>) -> Value {
    let encoded = base64::engine::general_purpose::STANDARD.encode(request.image);
    json!({
        "model": request.params.model_name,
        "messages": [{
            "role": "user",
            "content": [
                {"type": "text", "text": request.prompt},
                {"type": "image_url", "image_url": {"url": format!("data:image/jpeg;base64,{encoded}")}},
            ],
        }],
        "max_tokens": request.params.max_tokens,
        "temperature": request.params.temperature,
    })
}

/// Pulls `choices[0].message.content` out of a reply body.
pub fn extract_reply_text(body: &str) -> Result<String, BackendFault> {
    let value: Value =
        serde_json::from_str(body).map_err(|e| BackendFault::Malformed(e.to_string()))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendFault::Malformed("missing choices[0].message.content".into()))
}

impl VisionBackend for OpenAiCompatBackend {
    fn id(&self) -> &str {
        "openai-compatible"
    }

    fn complete(&self, request: &VisionRequest<'_>, _attempt: u32) -> Result<String, BackendFault> {
        let body = build_request_body(request);
        let response = self
            .agent
            .post(self.endpoint())
            .config()
            .timeout_global(Some(request.params.timeout))
            .build()
            .header("Authorization", format!("Bearer {}", self.api_key))
            .send_json(&body);
        let mut response = match response {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(BackendFault::Timeout),
            Err(e) => return Err(BackendFault::Transport(e.to_string())),
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(ureq::Error::Timeout(_)) => return Err(BackendFault::Timeout),
            Err(e) => return Err(BackendFault::Transport(e.to_string())),
        };
        match status {
            200..=299 => extract_reply_text(&text),
            429 => Err(BackendFault::RateLimited),
            408 | 500..=599 => Err(BackendFault::Transport(format!("HTTP {status}"))),
            _ => Err(BackendFault::Rejected(format!("HTTP {status}"))),
        }
    }
}

// ---------------------------------------------------------------------------
// Mock backend

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedFault {
    Timeout,
    RateLimit,
    Transport,
}

/// One fixture entry: a reply text or a fault.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedReply {
    Text { text: String },
    Fault { fault: ScriptedFault },
}

impl ScriptedReply {
    pub fn text(s: impl Into<String>) -> Self {
        ScriptedReply::Text { text: s.into() }
    }

    pub fn fault(f: ScriptedFault) -> Self {
        ScriptedReply::Fault { fault: f }
    }
}

/// A fixture value: a single entry used for every attempt, or a list
/// consumed one per attempt (the last entry repeats).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptEntry {
    Single(ScriptedReply),
    Sequence(Vec<ScriptedReply>),
}

impl ScriptEntry {
    fn for_attempt(&self, attempt: u32) -> Option<&ScriptedReply> {
        match self {
            ScriptEntry::Single(r) => Some(r),
            ScriptEntry::Sequence(seq) => {
                let idx = (attempt.max(1) as usize - 1).min(seq.len().checked_sub(1)?);
                seq.get(idx)
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("failed to read fixture {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("fixture is not a valid script: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Replays scripted replies. Read-only after construction.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    entries: HashMap<String, ScriptEntry>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_json_str(text: &str) -> Result<Self, FixtureError> {
        let entries: HashMap<String, ScriptEntry> = serde_json::from_str(text)?;
        Ok(Self { entries })
    }

    pub fn from_path(path: &Path) -> Result<Self, FixtureError> {
        let text = std::fs::read_to_string(path).map_err(|source| FixtureError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn insert(&mut self, key: &QueryKey, entry: ScriptEntry) -> &mut Self {
        self.entries.insert(key.to_string(), entry);
        self
    }

    pub fn insert_text(&mut self, key: &QueryKey, text: impl Into<String>) -> &mut Self {
        self.insert(key, ScriptEntry::Single(ScriptedReply::text(text)))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Pretty JSON with keys sorted, suitable for committing as a fixture.
    pub fn to_json(&self) -> String {
        let sorted: BTreeMap<_, _> = self.entries.iter().collect();
        serde_json::to_string_pretty(&sorted).expect("fixture serializes")
    }

    /// The scripted entry for `key` on the given attempt (1-based).
    pub fn mock_lookup(
        &self,
        key: &QueryKey,
        attempt: u32,
    ) -> Result<&ScriptedReply, GatewayError> {
        let k = key.to_string();
        self.entries
            .get(&k)
            .and_then(|e| e.for_attempt(attempt))
            .ok_or(GatewayError::UnscriptedKey(k))
    }
}

impl VisionBackend for MockBackend {
    fn id(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &VisionRequest<'_>, attempt: u32) -> Result<String, BackendFault> {
        match self.mock_lookup(request.key, attempt) {
            Ok(ScriptedReply::Text { text }) => Ok(text.clone()),
            Ok(ScriptedReply::Fault { fault }) => Err(match fault {
                ScriptedFault::Timeout => BackendFault::Timeout,
                ScriptedFault::RateLimit => BackendFault::RateLimited,
                ScriptedFault::Transport => BackendFault::Transport("scripted".into()),
            }),
            Err(_) => Err(BackendFault::Unscripted(request.key.to_string())),
        }
    }

    fn is_scripted(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(retries: u32) -> QueryParams {
        QueryParams {
            max_retries: retries,
            backoff_base: Duration::ZERO,
            ..QueryParams::default()
        }
    }

    fn mock(entries: &[(&QueryKey, ScriptEntry)]) -> Gateway {
        let mut m = MockBackend::new();
        for (k, e) in entries {
            m.insert(k, e.clone());
        }
        Gateway::new(Arc::new(m))
    }

    #[test]
    fn scripted_text_is_returned_verbatim() {
        let key = QueryKey::new("scene_007", PromptId::Bin, 0);
        let gw = mock(&[(&key, ScriptEntry::Single(ScriptedReply::text("yes")))]);
        let r = gw
            .send_vision_query(&key, b"img", "prompt", &params(3))
            .unwrap();
        assert_eq!(r.text, "yes");
        assert_eq!(r.attempt_count, 1);
        assert_eq!(r.latency, 0.0);
        assert_eq!(r.backend_id, "mock");
    }

    #[test]
    fn retries_rate_limit_then_succeeds() {
        let key = QueryKey::new("s", PromptId::P1, 0);
        let seq = ScriptEntry::Sequence(vec![
            ScriptedReply::fault(ScriptedFault::RateLimit),
            ScriptedReply::fault(ScriptedFault::RateLimit),
            ScriptedReply::text("(0.1,0.2), (0.3,0.4)"),
        ]);
        let gw = mock(&[(&key, seq)]);
        let r = gw.send_vision_query(&key, b"img", "p", &params(3)).unwrap();
        assert_eq!(r.attempt_count, 3);
        assert_eq!(r.attempts.len(), 3);
        assert_eq!(r.attempts[0].outcome, "rate_limit");
    }

    #[test]
    fn timeout_surfaces_after_retries() {
        let key = QueryKey::new("s", PromptId::P1, 1);
        let gw = mock(&[(
            &key,
            ScriptEntry::Single(ScriptedReply::fault(ScriptedFault::Timeout)),
        )]);
        let err = gw
            .send_vision_query(&key, b"img", "p", &params(2))
            .unwrap_err();
        let GatewayError::Timeout { transcript } = &err else {
            panic!("expected timeout, got {err:?}")
        };
        assert_eq!(transcript.len(), 3);
        assert_eq!(err.fault_name(), "timeout");
    }

    #[test]
    fn rate_limit_exhaustion_and_transport() {
        let a = QueryKey::new("a", PromptId::P1, 0);
        let b = QueryKey::new("b", PromptId::P1, 0);
        let gw = mock(&[
            (
                &a,
                ScriptEntry::Single(ScriptedReply::fault(ScriptedFault::RateLimit)),
            ),
            (
                &b,
                ScriptEntry::Single(ScriptedReply::fault(ScriptedFault::Transport)),
            ),
        ]);
        assert!(matches!(
            gw.send_vision_query(&a, b"i", "p", &params(1)),
            Err(GatewayError::RateLimitedExhausted { .. })
        ));
        assert!(matches!(
            gw.send_vision_query(&b, b"i", "p", &params(0)),
            Err(GatewayError::TransportError { ref transcript }) if transcript.len() == 1
        ));
    }

    #[test]
    fn preconditions_checked_before_backend() {
        let key = QueryKey::new("s", PromptId::Bin, 0);
        // Empty mock: any backend call would be UnscriptedKey.
        let gw = Gateway::new(Arc::new(MockBackend::new()));
        assert_eq!(
            gw.send_vision_query(&key, b"img", "", &params(0))
                .unwrap_err(),
            GatewayError::InvalidRequest("prompt is empty")
        );
        assert_eq!(
            gw.send_vision_query(&key, b"", "p", &params(0))
                .unwrap_err(),
            GatewayError::InvalidRequest("image payload is empty")
        );
        let bad = QueryParams {
            max_tokens: 0,
            ..params(0)
        };
        assert!(matches!(
            gw.send_vision_query(&key, b"i", "p", &bad),
            Err(GatewayError::InvalidRequest(_))
        ));
    }

    #[test]
    fn unscripted_key_is_an_error() {
        let key = QueryKey::new("missing", PromptId::P2, 2);
        let gw = Gateway::new(Arc::new(MockBackend::new()));
        assert_eq!(
            gw.send_vision_query(&key, b"i", "p", &params(3))
                .unwrap_err(),
            GatewayError::UnscriptedKey("missing|P2|2".into())
        );
    }

    #[test]
    fn fixture_json_format() {
        let text = r#"{
            "s1|BIN|0": {"text": "yes"},
            "s1|BIN|1": {"fault": "timeout"},
            "s2|P1|0": [{"fault": "rate_limit"}, {"text": "(0,0), (1,1)"}]
        }"#;
        let m = MockBackend::from_json_str(text).unwrap();
        assert_eq!(m.len(), 3);
        let k = QueryKey::new("s1", PromptId::Bin, 0);
        assert_eq!(m.mock_lookup(&k, 1).unwrap(), &ScriptedReply::text("yes"));
        let k = QueryKey::new("s2", PromptId::P1, 0);
        assert_eq!(
            m.mock_lookup(&k, 1).unwrap(),
            &ScriptedReply::fault(ScriptedFault::RateLimit)
        );
        assert_eq!(
            m.mock_lookup(&k, 5).unwrap(),
            &ScriptedReply::text("(0,0), (1,1)")
        );
        let again = MockBackend::from_json_str(&m.to_json()).unwrap();
        assert_eq!(again.to_json(), m.to_json());
        assert!(MockBackend::from_json_str(r#"{"k": {"fault": "meltdown"}}"#).is_err());
    }

    #[test]
    fn request_body_shape() {
        let key = QueryKey::new("s", PromptId::Bin, 0);
        let p = QueryParams::default();
        let req = VisionRequest {
            key: &key,
            image: &[0xff, 0xd8, 0xff],
            prompt: "hello",
            params: &p,
        };
        let body = build_request_body(&req);
        assert_eq!(body["model"], "gpt-4o");
        assert_eq!(body["max_tokens"], 300);
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"][0]["text"], "hello");
        assert_eq!(
            body["messages"][0]["content"][1]["image_url"]["url"],
            "data:image/jpeg;base64,/9j/"
        );
    }

    #[test]
    fn reply_extraction() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"  Yes.\n"}}]}"#;
        assert_eq!(extract_reply_text(ok).unwrap(), "  Yes.\n");
        assert!(matches!(
            extract_reply_text(r#"{"choices":[]}"#),
            Err(BackendFault::Malformed(_))
        ));
        assert!(matches!(
            extract_reply_text("<html>"),
            Err(BackendFault::Malformed(_))
        ));
    }

    #[test]
    fn backoff_doubles() {
        let p = QueryParams {
            backoff_base: Duration::from_millis(100),
            ..QueryParams::default()
        };
        assert_eq!(p.backoff(1), Duration::from_millis(100));
        assert_eq!(p.backoff(2), Duration::from_millis(200));
        assert_eq!(p.backoff(3), Duration::from_millis(400));
    }
}

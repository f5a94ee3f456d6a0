//! Contracts for the three external model roles (text LLM, vision-language
//! model, embedding source), retry handling, rate limiting, and mocks.

mod embedding;
mod http;
mod json;
mod mock;
mod throttle;

use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::Frame;
use crate::error::ProviderError;

pub use embedding::{
    read_vdem, write_vdem, Embedder, EmbeddingMatrix, MockEmbedder, PrecomputedEmbedder, NORM_TOLERANCE,
    VDEM_MAGIC, VDEM_VERSION,
};
pub use http::{HttpEmbedder, OpenAiCompatible};
pub use json::extract_json;
pub use mock::{prompt_hash, CannedLlm, FnLlm, FnVlm, ScriptedLlm, ScriptedVlm};
pub use throttle::{Throttled, TokenBucket};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseFormat {
    FreeText,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    /// Caller-chosen correlation id.
    pub id: String,
    pub prompt: String,
    pub response_format: ResponseFormat,
    pub temperature: f64,
    pub seed: Option<u64>,
    /// Zero-based attempt number, set by [`complete`] on retries.
    #[serde(default)]
    pub attempt: u32,
}

impl LlmRequest {
    pub fn json(id: impl Into<String>, prompt: impl Into<String>) -> Self {
        LlmRequest {
            id: id.into(),
            prompt: prompt.into(),
            response_format: ResponseFormat::Json,
            temperature: 0.0,
            seed: None,
            attempt: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub id: String,
    pub text: String,
    pub parsed_json: Option<Value>,
    pub parse_failed: bool,
    pub attempts: u32,
}

/// A video handed to a provider that accepts video payloads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoPayload {
    pub name: String,
    pub frame_paths: Vec<PathBuf>,
    pub fps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VlmRequest {
    pub id: String,
    pub prompt: String,
    /// Attached in prompt order.
    pub images: Vec<Frame>,
    pub videos: Vec<VideoPayload>,
    pub response_format: ResponseFormat,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub attempt: u32,
}

impl VlmRequest {
    pub fn with_images(id: impl Into<String>, prompt: impl Into<String>, images: Vec<Frame>) -> Self {
        VlmRequest {
            id: id.into(),
            prompt: prompt.into(),
            images,
            videos: Vec::new(),
            response_format: ResponseFormat::Json,
            temperature: 0.0,
            seed: None,
            attempt: 0,
        }
    }
}

pub trait LlmProvider: Send + Sync {
    fn send(&self, req: &LlmRequest) -> Result<String, ProviderError>;
}

pub trait VlmProvider: Send + Sync {
    fn send(&self, req: &VlmRequest) -> Result<String, ProviderError>;
}

impl<P: LlmProvider + ?Sized> LlmProvider for Arc<P> {
    fn send(&self, req: &LlmRequest) -> Result<String, ProviderError> {
        (**self).send(req)
    }
}

impl<P: VlmProvider + ?Sized> VlmProvider for Arc<P> {
    fn send(&self, req: &VlmRequest) -> Result<String, ProviderError> {
        (**self).send(req)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts when a json reply fails to parse.
    pub max_attempts: u32,
    /// Extra attempts allowed after rate-limit rejections.
    pub rate_limit_retries: u32,
    pub base_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            rate_limit_retries: 5,
            base_backoff_ms: 500,
            max_backoff_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, retry: u32, hint_ms: u64) -> Duration {
        let exp = self.base_backoff_ms.saturating_mul(1 << retry.min(16));
        Duration::from_millis(exp.max(hint_ms).min(self.max_backoff_ms))
    }
}

/// One provider call, for cost accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub role: String,
    pub id: String,
    pub attempt: u32,
    pub prompt_chars: usize,
    /// Rough token estimate (4 chars per token).
    pub prompt_tokens_est: usize,
    pub n_images: usize,
    pub n_videos: usize,
    pub reply_chars: usize,
    pub ok: bool,
}

/// Shared log of every provider call.
#[derive(Debug, Clone, Default)]
pub struct CallLog {
    inner: Arc<Mutex<Vec<CallRecord>>>,
}

impl CallLog {
    pub fn record(&self, rec: CallRecord) {
        self.inner.lock().expect("call log poisoned").push(rec);
    }

    /// Records ordered by (role, id, attempt).
    pub fn snapshot(&self) -> Vec<CallRecord> {
        let mut v = self.inner.lock().expect("call log poisoned").clone();
        v.sort_by(|a, b| (&a.role, &a.id, a.attempt).cmp(&(&b.role, &b.id, b.attempt)));
        v
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("call log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn record(log: Option<&CallLog>, role: &str, id: &str, attempt: u32, prompt: &str, imgs: usize, vids: usize, reply: &Result<String, ProviderError>) {
    if let Some(log) = log {
        log.record(CallRecord {
            role: role.to_string(),
            id: id.to_string(),
            attempt,
            prompt_chars: prompt.chars().count(),
            prompt_tokens_est: prompt.chars().count().div_ceil(4),
            n_images: imgs,
            n_videos: vids,
            reply_chars: reply.as_ref().map_or(0, |r| r.chars().count()),
            ok: reply.is_ok(),
        });
    }
}

/// Shared retry loop: rate limits back off, json parse failures re-ask.
fn with_retries(
    policy: &RetryPolicy,
    json: bool,
    mut call: impl FnMut(u32) -> Result<String, ProviderError>,
) -> Result<(String, Option<Value>, u32), ProviderError> {
    let mut attempt = 0u32;
    let mut rate_limited = 0u32;
    let max_attempts = policy.max_attempts.max(1);
    loop {
        match call(attempt) {
            Ok(text) => {
                if !json {
                    return Ok((text, None, attempt + 1));
                }
                if let Some(v) = extract_json(&text) {
                    return Ok((text, Some(v), attempt + 1));
                }
                attempt += 1;
                if attempt >= max_attempts {
                    return Err(ProviderError::Parse {
                        attempts: attempt,
                        last_reply: text,
                    });
                }
            }
            Err(ProviderError::RateLimited { retry_after_ms }) if rate_limited < policy.rate_limit_retries => {
                thread::sleep(policy.backoff(rate_limited, retry_after_ms));
                rate_limited += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Send a text request, re-asking on malformed json.
pub fn complete(
    provider: &dyn LlmProvider,
    req: &LlmRequest,
    policy: &RetryPolicy,
    log: Option<&CallLog>,
) -> Result<LlmResponse, ProviderError> {
    if req.prompt.trim().is_empty() {
        return Err(ProviderError::EmptyPrompt);
    }
    let json = req.response_format == ResponseFormat::Json;
    let (text, parsed_json, attempts) = with_retries(policy, json, |attempt| {
        let mut r = req.clone();
        r.attempt = attempt;
        let reply = provider.send(&r);
        record(log, "llm", &req.id, attempt, &req.prompt, 0, 0, &reply);
        reply
    })?;
    Ok(LlmResponse {
        id: req.id.clone(),
        text,
        parsed_json,
        parse_failed: false,
        attempts,
    })
}

/// Vision counterpart of [`complete`].
pub fn complete_vision(
    provider: &dyn VlmProvider,
    req: &VlmRequest,
    policy: &RetryPolicy,
    log: Option<&CallLog>,
) -> Result<LlmResponse, ProviderError> {
    if req.prompt.trim().is_empty() {
        return Err(ProviderError::EmptyPrompt);
    }
    if req.images.is_empty() && req.videos.is_empty() {
        return Err(ProviderError::NoVisualInput);
    }
    let json = req.response_format == ResponseFormat::Json;
    let (text, parsed_json, attempts) = with_retries(policy, json, |attempt| {
        let mut r = req.clone();
        r.attempt = attempt;
        let reply = provider.send(&r);
        record(log, "vlm", &req.id, attempt, &req.prompt, req.images.len(), req.videos.len(), &reply);
        reply
    })?;
    Ok(LlmResponse {
        id: req.id.clone(),
        text,
        parsed_json,
        parse_failed: false,
        attempts,
    })
}

/// Provider handles and call settings shared by every stage.
#[derive(Clone)]
pub struct Models {
    pub llm: Arc<dyn LlmProvider>,
    pub vlm: Arc<dyn VlmProvider>,
    pub embedder: Arc<dyn Embedder>,
    pub retry: RetryPolicy,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub calls: CallLog,
}

impl Models {
    pub fn new(llm: Arc<dyn LlmProvider>, vlm: Arc<dyn VlmProvider>, embedder: Arc<dyn Embedder>) -> Self {
        Models {
            llm,
            vlm,
            embedder,
            retry: RetryPolicy::default(),
            temperature: 0.0,
            seed: None,
            calls: CallLog::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn ask_json(&self, id: impl Into<String>, prompt: impl Into<String>) -> Result<LlmResponse, ProviderError> {
        let req = LlmRequest {
            id: id.into(),
            prompt: prompt.into(),
            response_format: ResponseFormat::Json,
            temperature: self.temperature,
            seed: self.seed,
            attempt: 0,
        };
        complete(self.llm.as_ref(), &req, &self.retry, Some(&self.calls))
    }

    pub fn ask_vision(&self, mut req: VlmRequest) -> Result<LlmResponse, ProviderError> {
        req.temperature = self.temperature;
        req.seed = self.seed;
        complete_vision(self.vlm.as_ref(), &req, &self.retry, Some(&self.calls))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fast() -> RetryPolicy {
        RetryPolicy {
            base_backoff_ms: 0,
            max_backoff_ms: 0,
            ..RetryPolicy::default()
        }
    }

    #[test]
    fn canned_reply_keyed_on_prompt_hash() {
        let llm = CannedLlm::new().with("list differences", r#"{"0": {"name": "depth"}}"#);
        let r = complete(&llm, &LlmRequest::json("x", "list differences"), &fast(), None).unwrap();
        assert_eq!(r.parsed_json.unwrap()["0"]["name"], "depth");
        assert!(complete(&llm, &LlmRequest::json("x", "other"), &fast(), None).is_err());
    }

    #[test]
    fn malformed_then_valid_uses_second_reply() {
        let llm = ScriptedLlm::new(["not json at all", r#"{"ok": true}"#]);
        let log = CallLog::default();
        let r = complete(&llm, &LlmRequest::json("x", "p"), &fast(), Some(&log)).unwrap();
        assert_eq!(r.parsed_json, Some(serde_json::json!({"ok": true})));
        assert_eq!(r.attempts, 2);
        assert_eq!(log.len(), 2);
        assert_eq!(llm.received()[1].attempt, 1);
    }

    #[test]
    fn persistent_parse_failure_surfaces_after_max_attempts() {
        let llm = ScriptedLlm::new(["a", "b", "c", r#"{"late": 1}"#]);
        match complete(&llm, &LlmRequest::json("x", "p"), &fast(), None) {
            Err(ProviderError::Parse { attempts: 3, last_reply }) => assert_eq!(last_reply, "c"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_prompt_is_rejected_without_a_call() {
        let llm = ScriptedLlm::new(["{}"]);
        assert_eq!(
            complete(&llm, &LlmRequest::json("x", "   "), &fast(), None),
            Err(ProviderError::EmptyPrompt)
        );
        assert!(llm.received().is_empty());
    }

    #[test]
    fn rate_limits_are_retried() {
        let llm = ScriptedLlm::from_results(vec![
            Err(ProviderError::RateLimited { retry_after_ms: 0 }),
            Err(ProviderError::RateLimited { retry_after_ms: 0 }),
            Ok(r#"{"v": 1}"#.into()),
        ]);
        let r = complete(&llm, &LlmRequest::json("x", "p"), &fast(), None).unwrap();
        assert_eq!(r.parsed_json.unwrap()["v"], 1);
    }

    #[test]
    fn transport_errors_propagate() {
        let llm = ScriptedLlm::from_results(vec![Err(ProviderError::Transport("down".into()))]);
        assert!(matches!(
            complete(&llm, &LlmRequest::json("x", "p"), &fast(), None),
            Err(ProviderError::Transport(_))
        ));
    }

    #[test]
    fn free_text_is_not_parsed() {
        let llm = ScriptedLlm::new(["plain words"]);
        let mut req = LlmRequest::json("x", "p");
        req.response_format = ResponseFormat::FreeText;
        let r = complete(&llm, &req, &fast(), None).unwrap();
        assert_eq!(r.text, "plain words");
        assert!(r.parsed_json.is_none());
    }

    #[test]
    fn vision_requires_visual_input() {
        let vlm = ScriptedVlm::new(["{}"]);
        let req = VlmRequest::with_images("x", "p", vec![]);
        assert_eq!(
            complete_vision(&vlm, &req, &fast(), None),
            Err(ProviderError::NoVisualInput)
        );
    }
}

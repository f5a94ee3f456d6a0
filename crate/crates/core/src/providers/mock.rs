//! Offline providers for tests and examples.
//!
//! [`CannedLlm`], [`FnLlm`] and [`FnVlm`] are pure functions of the request.
//! The scripted variants replay a queue and are meant for single-threaded
//! tests of retry paths.

use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use super::{LlmProvider, LlmRequest, VlmProvider, VlmRequest};
use crate::error::ProviderError;

/// Hex sha256 of a prompt.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Replies looked up by prompt hash.
#[derive(Debug, Default, Clone)]
pub struct CannedLlm {
    replies: HashMap<String, String>,
}

impl CannedLlm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, prompt: &str, reply: &str) -> Self {
        self.insert(prompt, reply);
        self
    }

    pub fn insert(&mut self, prompt: &str, reply: &str) {
        self.replies.insert(prompt_hash(prompt), reply.to_string());
    }
}

impl LlmProvider for CannedLlm {
    fn send(&self, req: &LlmRequest) -> Result<String, ProviderError> {
        self.replies
            .get(&prompt_hash(&req.prompt))
            .cloned()
            .ok_or_else(|| ProviderError::Unscripted(req.id.clone()))
    }
}

/// Replays replies in order; records what it was sent.
#[derive(Debug, Default)]
pub struct ScriptedLlm {
    queue: Mutex<VecDeque<Result<String, ProviderError>>>,
    received: Mutex<Vec<LlmRequest>>,
}

impl ScriptedLlm {
    pub fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self::from_results(replies.into_iter().map(|s| Ok(s.into())).collect())
    }

    pub fn from_results(replies: Vec<Result<String, ProviderError>>) -> Self {
        ScriptedLlm {
            queue: Mutex::new(replies.into()),
            received: Mutex::new(Vec::new()),
        }
    }

    pub fn received(&self) -> Vec<LlmRequest> {
        self.received.lock().unwrap().clone()
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().unwrap().len()
    }
}

impl LlmProvider for ScriptedLlm {
    fn send(&self, req: &LlmRequest) -> Result<String, ProviderError> {
        self.received.lock().unwrap().push(req.clone());
        self.queue
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(ProviderError::Unscripted(req.id.clone())))
    }
}

#[derive(Debug, Default)]
pub struct ScriptedVlm {
    queue: Mutex<VecDeque<Result<String, ProviderError>>>,
    received: Mutex<Vec<(String, usize)>>,
}

impl ScriptedVlm {
    pub fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        ScriptedVlm {
            queue: Mutex::new(replies.into_iter().map(|s| Ok(s.into())).collect()),
            received: Mutex::new(Vec::new()),
        }
    }

    /// `(prompt, image count)` of each call.
    pub fn received(&self) -> Vec<(String, usize)> {
        self.received.lock().unwrap().clone()
    }
}

impl VlmProvider for ScriptedVlm {
    fn send(&self, req: &VlmRequest) -> Result<String, ProviderError> {
        self.received.lock().unwrap().push((req.prompt.clone(), req.images.len()));
        self.queue
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(ProviderError::Unscripted(req.id.clone())))
    }
}

/// LLM backed by a closure.
pub struct FnLlm<F>(pub F);

impl<F> LlmProvider for FnLlm<F>
where
    F: Fn(&LlmRequest) -> Result<String, ProviderError> + Send + Sync,
{
    fn send(&self, req: &LlmRequest) -> Result<String, ProviderError> {
        (self.0)(req)
    }
}

/// VLM backed by a closure.
pub struct FnVlm<F>(pub F);

impl<F> VlmProvider for FnVlm<F>
where
    F: Fn(&VlmRequest) -> Result<String, ProviderError> + Send + Sync,
{
    fn send(&self, req: &VlmRequest) -> Result<String, ProviderError> {
        (self.0)(req)
    }
}

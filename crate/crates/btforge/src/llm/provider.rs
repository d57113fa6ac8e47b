use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    check_messages, estimate_prompt_tokens, estimate_tokens, request_digest, ChatMessage,
    ChatProvider, CompletionParams, CompletionResult, LlmError,
};

/// One scripted or recorded reply. Missing token counts are estimated.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
}

impl ReplayEntry {
    pub fn text(text: impl Into<String>) -> Self {
        ReplayEntry {
            text: text.into(),
            prompt_tokens: None,
            completion_tokens: None,
        }
    }

    fn resolve(&self, messages: &[ChatMessage]) -> CompletionResult {
        CompletionResult {
            text: self.text.clone(),
            prompt_tokens: self
                .prompt_tokens
                .unwrap_or_else(|| estimate_prompt_tokens(messages)),
            completion_tokens: self
                .completion_tokens
                .unwrap_or_else(|| estimate_tokens(&self.text)),
        }
    }
}

impl From<&CompletionResult> for ReplayEntry {
    fn from(r: &CompletionResult) -> Self {
        ReplayEntry {
            text: r.text.clone(),
            prompt_tokens: Some(r.prompt_tokens),
            completion_tokens: Some(r.completion_tokens),
        }
    }
}

/// Scripted replies handed out first-in first-out, whatever the request.
#[derive(Debug, Default)]
pub struct MockProvider {
    script: Mutex<VecDeque<ReplayEntry>>,
    requests: Mutex<Vec<Vec<ChatMessage>>>,
}

impl MockProvider {
    pub fn new(replies: impl IntoIterator<Item = ReplayEntry>) -> Self {
        MockProvider {
            script: Mutex::new(replies.into_iter().collect()),
            requests: Mutex::default(),
        }
    }

    pub fn from_texts<S: Into<String>>(texts: impl IntoIterator<Item = S>) -> Self {
        Self::new(texts.into_iter().map(ReplayEntry::text))
    }

    /// Reads a JSON list of [`ReplayEntry`].
    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let entries: Vec<ReplayEntry> =
            serde_json::from_str(&text).map_err(std::io::Error::other)?;
        Ok(Self::new(entries))
    }

    pub fn push(&self, entry: ReplayEntry) {
        self.script
            .lock()
            .expect("mock script lock")
            .push_back(entry);
    }

    pub fn remaining(&self) -> usize {
        self.script.lock().expect("mock script lock").len()
    }

    /// Every request received so far, in order.
    pub fn requests(&self) -> Vec<Vec<ChatMessage>> {
        self.requests.lock().expect("mock request lock").clone()
    }

    pub fn calls(&self) -> usize {
        self.requests.lock().expect("mock request lock").len()
    }
}

impl ChatProvider for MockProvider {
    fn complete(
        &self,
        messages: &[ChatMessage],
        _: &CompletionParams,
    ) -> Result<CompletionResult, LlmError> {
        check_messages(messages)?;
        self.requests
            .lock()
            .expect("mock request lock")
            .push(messages.to_vec());
        let entry = self
            .script
            .lock()
            .expect("mock script lock")
            .pop_front()
            .ok_or_else(|| LlmError::ProviderUnavailable("mock script exhausted".into()))?;
        Ok(entry.resolve(messages))
    }
}

/// Request digest to recorded reply.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReplayFixture(pub BTreeMap<String, ReplayEntry>);

impl ReplayFixture {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("fixture serializes");
        text.push('\n');
        text
    }

    pub fn insert(&mut self, messages: &[ChatMessage], entry: ReplayEntry) {
        self.0.insert(request_digest(messages), entry);
    }

    pub fn get(&self, messages: &[ChatMessage]) -> Option<&ReplayEntry> {
        self.0.get(&request_digest(messages))
    }

    pub fn merge(&mut self, other: ReplayFixture) {
        self.0.extend(other.0);
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Answers from a [`ReplayFixture`]; an unrecorded request is an error.
#[derive(Debug, Clone)]
pub struct ReplayProvider {
    fixture: ReplayFixture,
}

impl ReplayProvider {
    pub fn new(fixture: ReplayFixture) -> Self {
        ReplayProvider { fixture }
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        ReplayFixture::load(path).map(Self::new)
    }

    pub fn fixture(&self) -> &ReplayFixture {
        &self.fixture
    }
}

impl ChatProvider for ReplayProvider {
    fn complete(
        &self,
        messages: &[ChatMessage],
        _: &CompletionParams,
    ) -> Result<CompletionResult, LlmError> {
        check_messages(messages)?;
        let digest = request_digest(messages);
        self.fixture
            .0
            .get(&digest)
            .map(|e| e.resolve(messages))
            .ok_or(LlmError::ReplayMiss(digest))
    }
}

/// Forwards to an inner provider and records every successful exchange.
pub struct RecordingProvider<P> {
    inner: P,
    recorded: Mutex<ReplayFixture>,
}

impl<P: ChatProvider> RecordingProvider<P> {
    pub fn new(inner: P) -> Self {
        RecordingProvider {
            inner,
            recorded: Mutex::default(),
        }
    }

    pub fn recorded(&self) -> ReplayFixture {
        self.recorded.lock().expect("recording lock").clone()
    }

    pub fn into_inner(self) -> P {
        self.inner
    }
}

impl<P: ChatProvider> ChatProvider for RecordingProvider<P> {
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &CompletionParams,
    ) -> Result<CompletionResult, LlmError> {
        let result = self.inner.complete(messages, params)?;
        self.recorded
            .lock()
            .expect("recording lock")
            .insert(messages, ReplayEntry::from(&result));
        Ok(result)
    }
}

//! Chat-completion providers, prompt assembly and reply parsing.

mod http;
mod parse;
mod prompt;
mod provider;

pub use http::{HttpConfig, HttpProvider};
pub use parse::{parse_action_sequence, parse_bt_response, BtResponse, ResponseError};
pub use prompt::{domain_knowledge, render_prompt, PromptContext, PromptError, TemplateId};
pub use provider::{MockProvider, RecordingProvider, ReplayEntry, ReplayFixture, ReplayProvider};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub temperature: f32,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl Default for CompletionParams {
    fn default() -> Self {
        CompletionParams {
            temperature: 0.0,
            max_tokens: 2048,
            seed: Some(0),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl CompletionResult {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LlmError {
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("no recorded reply for request digest {0}")]
    ReplayMiss(String),
    #[error("provider returned HTTP status {0}")]
    HttpStatus(u16),
    #[error("provider timed out")]
    Timeout,
    #[error("empty message content at index {0}")]
    EmptyMessage(usize),
}

/// A chat-completion backend. Implementations are shared across sessions
/// and threads.
pub trait ChatProvider: Send + Sync {
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &CompletionParams,
    ) -> Result<CompletionResult, LlmError>;
}

impl<P: ChatProvider + ?Sized> ChatProvider for std::sync::Arc<P> {
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &CompletionParams,
    ) -> Result<CompletionResult, LlmError> {
        (**self).complete(messages, params)
    }
}

impl<P: ChatProvider + ?Sized> ChatProvider for &P {
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &CompletionParams,
    ) -> Result<CompletionResult, LlmError> {
        (**self).complete(messages, params)
    }
}

/// Rough BPE-sized token count: one token per four characters, rounded up.
pub fn estimate_tokens(text: &str) -> u64 {
    text.chars().count().div_ceil(4) as u64
}

/// Prompt-side estimate over every message body.
pub fn estimate_prompt_tokens(messages: &[ChatMessage]) -> u64 {
    messages.iter().map(|m| estimate_tokens(&m.content)).sum()
}

/// Hex SHA-256 of the canonical JSON encoding of `messages`.
pub fn request_digest(messages: &[ChatMessage]) -> String {
    let canonical = serde_json::to_vec(messages).expect("messages serialize");
    hex::encode(Sha256::digest(&canonical))
}

pub(crate) fn check_messages(messages: &[ChatMessage]) -> Result<(), LlmError> {
    match messages.iter().position(|m| m.content.is_empty()) {
        Some(i) => Err(LlmError::EmptyMessage(i)),
        None => Ok(()),
    }
}

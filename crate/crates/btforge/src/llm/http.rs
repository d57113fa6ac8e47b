use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{
    check_messages, ChatMessage, ChatProvider, CompletionParams, CompletionResult, LlmError,
};

pub const ENV_BASE_URL: &str = "BTFORGE_LLM_BASE_URL";
pub const ENV_MODEL: &str = "BTFORGE_LLM_MODEL";
pub const ENV_API_KEY: &str = "BTFORGE_LLM_API_KEY";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HttpConfig {
    /// Base URL up to and excluding `/chat/completions`, e.g. `https://host/v1`.
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        HttpConfig {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            timeout: Duration::from_secs(120),
            max_in_flight: 4,
        }
    }

    /// Reads base URL, model and key from the environment.
    pub fn from_env() -> Result<Self, LlmError> {
        let var = |name: &str| std::env::var(name).ok().filter(|v| !v.is_empty());
        let base_url = var(ENV_BASE_URL)
            .ok_or_else(|| LlmError::ProviderUnavailable(format!("{ENV_BASE_URL} is not set")))?;
        let model = var(ENV_MODEL)
            .ok_or_else(|| LlmError::ProviderUnavailable(format!("{ENV_MODEL} is not set")))?;
        let mut config = HttpConfig::new(base_url, model);
        config.api_key = var(ENV_API_KEY);
        Ok(config)
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

/// Counting gate bounding concurrent requests.
struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().expect("gate lock");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("gate lock");
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().expect("gate lock") -= 1;
        self.0.freed.notify_one();
    }
}

/// OpenAI-style chat-completions client.
pub struct HttpProvider {
    config: HttpConfig,
    agent: ureq::Agent,
    gate: Gate,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl HttpProvider {
    pub fn new(config: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = Gate {
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            limit: config.max_in_flight.max(1),
        };
        HttpProvider {
            config,
            agent,
            gate,
        }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }
}

fn transport_error(e: ureq::Error) -> LlmError {
    match e {
        ureq::Error::Timeout(_) => LlmError::Timeout,
        ureq::Error::StatusCode(code) => LlmError::HttpStatus(code),
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => LlmError::Timeout,
        other => LlmError::ProviderUnavailable(other.to_string()),
    }
}

impl ChatProvider for HttpProvider {
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &CompletionParams,
    ) -> Result<CompletionResult, LlmError> {
        check_messages(messages)?;
        let mut body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        });
        if let Some(seed) = params.seed {
            body["seed"] = seed.into();
        }
        let _permit = self.gate.acquire();
        let mut request = self.agent.post(&self.config.endpoint());
        if let Some(key) = &self.config.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send_json(&body).map_err(transport_error)?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(LlmError::HttpStatus(status));
        }
        let wire: WireResponse = response.body_mut().read_json().map_err(transport_error)?;
        let text = wire
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| {
                LlmError::ProviderUnavailable("response has no message content".into())
            })?;
        let usage = wire.usage.unwrap_or(WireUsage {
            prompt_tokens: 0,
            completion_tokens: 0,
        });
        Ok(CompletionResult {
            text,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
        })
    }
}

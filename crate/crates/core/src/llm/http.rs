use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::backend::approx_tokens;
use super::{ChatReply, Conversation, LlmBackend, LlmError, TemplateId};

pub const API_KEY_ENV: &str = "LLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    pub endpoint: String,
    pub model: String,
    /// Left unset by default so the provider's sampling applies.
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    120
}

/// Chat-completion client over JSON/HTTP.
pub struct HttpBackend {
    config: HttpBackendConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: Option<u64>,
    #[serde(default)]
    completion_tokens: Option<u64>,
}

impl HttpBackend {
    /// Reads the API key from `LLM_API_KEY`; the key is optional for local
    /// endpoints.
    pub fn from_env(config: HttpBackendConfig) -> Result<Self, LlmError> {
        let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::new(config, api_key)
    }

    pub fn new(config: HttpBackendConfig, api_key: Option<String>) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(HttpBackend {
            config,
            api_key,
            client,
        })
    }

    fn request_body(&self, conversation: &Conversation) -> serde_json::Value {
        let messages: Vec<_> = conversation
            .turns()
            .iter()
            .map(|t| json!({"role": t.role.as_str(), "content": t.text}))
            .collect();
        let mut body = json!({"model": self.config.model, "messages": messages});
        if let Some(t) = self.config.temperature {
            body["temperature"] = json!(t);
        }
        body
    }
}

impl LlmBackend for HttpBackend {
    fn chat(&self, _template: TemplateId, conversation: &Conversation) -> Result<ChatReply, LlmError> {
        let mut req = self
            .client
            .post(&self.config.endpoint)
            .json(&self.request_body(conversation));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(LlmError::Transport(format!("provider returned {status}")));
        }
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(LlmError::Config(format!("provider returned {status}: {body}")));
        }
        let parsed: CompletionResponse = resp
            .json()
            .map_err(|e| LlmError::Transport(format!("bad completion payload: {e}")))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::Transport("completion has no content".into()))?;
        let usage = parsed.usage;
        Ok(ChatReply {
            tokens_in: usage
                .as_ref()
                .and_then(|u| u.prompt_tokens)
                .unwrap_or_else(|| approx_tokens(conversation.total_chars())),
            tokens_out: usage
                .as_ref()
                .and_then(|u| u.completion_tokens)
                .unwrap_or_else(|| approx_tokens(text.chars().count())),
            text,
            latency: None,
        })
    }
}

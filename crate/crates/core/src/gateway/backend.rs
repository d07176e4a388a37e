//! Chat backends: one network attempt per `send`.

use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

use super::{AgentMessage, BackendConfig, Role};

#[derive(Debug, Error)]
pub enum BackendError {
    /// Network-level failure (connect, timeout, IO). Retryable.
    #[error("transport error: {0}")]
    Transport(String),
    /// HTTP error status. 429 and 5xx are retryable, other 4xx are not.
    #[error("HTTP {status}: {message}")]
    Http { status: u16, message: String },
    /// Misconfiguration or an exhausted mock script. Never retried.
    #[error("backend configuration error: {0}")]
    Config(String),
}

impl BackendError {
    pub fn retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Http { status, .. } => *status == 429 || *status >= 500,
            BackendError::Config(_) => false,
        }
    }
}

/// One completion attempt's result.
#[derive(Debug, Clone)]
pub struct ChatReply {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// A chat-completion backend. `send` performs exactly one network attempt;
/// retry policy lives in the gateway.
pub trait ChatBackend: Send + Sync {
    fn send(&self, config: &BackendConfig, messages: &[AgentMessage])
        -> Result<ChatReply, BackendError>;

    /// Stable identifier of the model behind this backend, used to key
    /// summary caches and index fingerprints.
    fn fingerprint(&self, config: &BackendConfig) -> String;
}

/// OpenAI-compatible chat-completions client.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: &BackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(HttpBackend { client })
    }

    fn url(config: &BackendConfig) -> String {
        let base = config.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
    #[serde(default)]
    usage: Option<CompletionUsage>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    message: CompletionMessage,
}

#[derive(Deserialize)]
struct CompletionMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize, Default)]
struct CompletionUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl ChatBackend for HttpBackend {
    fn send(
        &self,
        config: &BackendConfig,
        messages: &[AgentMessage],
    ) -> Result<ChatReply, BackendError> {
        let body = json!({
            "model": config.model,
            "temperature": config.temperature,
            "messages": messages
                .iter()
                .map(|m| {
                    json!({
                        "role": match m.role {
                            Role::System => "system",
                            Role::User => "user",
                            Role::Tool => "tool",
                        },
                        "content": m.content,
                    })
                })
                .collect::<Vec<_>>(),
        });

        let mut request = self.client.post(Self::url(config)).json(&body);
        // Credentials come from the environment only, never the config file.
        if let Ok(key) = std::env::var(&config.api_key_env) {
            if !key.is_empty() {
                request = request.bearer_auth(key);
            }
        }

        let response = request.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if status != 200 {
            return Err(BackendError::Http { status, message: truncate(&text, 500) });
        }

        let parsed: CompletionResponse = serde_json::from_str(&text)
            .map_err(|e| BackendError::Transport(format!("bad completion payload: {e}")))?;
        let content = parsed
            .choices
            .first()
            .and_then(|c| c.message.content.clone())
            .ok_or_else(|| BackendError::Transport("completion had no content".to_string()))?;
        let usage = parsed.usage.unwrap_or_default();
        Ok(ChatReply {
            text: content,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
        })
    }

    fn fingerprint(&self, config: &BackendConfig) -> String {
        config.model.clone()
    }
}

fn truncate(s: &str, max: usize) -> String {
    if s.len() <= max {
        s.to_string()
    } else {
        let mut end = max;
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}…", &s[..end])
    }
}

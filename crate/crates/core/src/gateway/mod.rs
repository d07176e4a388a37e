//! Backend abstraction over chat-completion endpoints.
//!
//! The gateway owns retries, strict output-contract parsing with a single
//! repair reprompt, and the per-step token/cost ledger. Backends implement
//! one network attempt each; the scripted mock keeps the whole pipeline
//! reproducible offline.

mod backend;
mod contracts;
mod ledger;
mod mock;

pub use backend::{BackendError, ChatBackend, ChatReply, HttpBackend};
pub use contracts::{
    ParsedResponse, RawAudit, RawCandidate, RawSummary, ResponseContract, SummaryStatus,
};
pub use ledger::{LedgerReport, StepLabel, StepUsage, UsageLedger};
pub use mock::{MockBackend, MockReply, MockRule, MockScript};

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("output contract violated after repair: {message}; raw response: {raw:?}")]
    Contract { message: String, raw: String },
    #[error("gateway misuse: {0}")]
    Misuse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Tool,
}

/// One chat message. Content is never empty; `complete` rejects calls that
/// would send an empty message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentMessage {
    pub role: Role,
    pub content: String,
}

impl AgentMessage {
    pub fn system(content: impl Into<String>) -> Self {
        AgentMessage { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        AgentMessage { role: Role::User, content: content.into() }
    }

    pub fn tool(content: impl Into<String>) -> Self {
        AgentMessage { role: Role::Tool, content: content.into() }
    }
}

/// Connection and pricing settings for one agent's backend.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub retries: u32,
    pub timeout_secs: u64,
    /// Dollars per prompt token.
    pub prompt_price: f64,
    /// Dollars per completion token.
    pub completion_price: f64,
    /// Base backoff between retry attempts; doubles per attempt.
    pub backoff_ms: u64,
    /// Passthrough for backends that accept a reasoning-effort knob; no
    /// semantics in the mock.
    pub reasoning_effort: Option<String>,
    /// Name of the environment variable holding the API credential.
    pub api_key_env: String,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint: String::new(),
            model: "mock".to_string(),
            temperature: 0.2,
            retries: 2,
            timeout_secs: 120,
            prompt_price: 0.0,
            completion_price: 0.0,
            backoff_ms: 250,
            reasoning_effort: None,
            api_key_env: "ICDKIT_API_KEY".to_string(),
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::Misuse(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.prompt_price < 0.0 || self.completion_price < 0.0 {
            return Err(GatewayError::Misuse("negative token price".to_string()));
        }
        Ok(())
    }
}

/// Usage attributed to one logical `complete` call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub calls: u64,
    pub cost: f64,
}

/// One agent's gateway: a backend plus its config and a shared ledger.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    config: BackendConfig,
    ledger: Arc<UsageLedger>,
}

impl Gateway {
    pub fn new(
        backend: Arc<dyn ChatBackend>,
        config: BackendConfig,
        ledger: Arc<UsageLedger>,
    ) -> Result<Self, GatewayError> {
        config.validate()?;
        Ok(Gateway { backend, config, ledger })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn ledger(&self) -> &Arc<UsageLedger> {
        &self.ledger
    }

    /// Identifier of the model behind this gateway, used for cache keys.
    pub fn fingerprint(&self) -> String {
        self.backend.fingerprint(&self.config)
    }

    /// Swaps the ledger, keeping backend and config. Used to scope usage to
    /// a single note before merging into the run-level ledger.
    pub fn with_ledger(&self, ledger: Arc<UsageLedger>) -> Gateway {
        Gateway { backend: Arc::clone(&self.backend), config: self.config.clone(), ledger }
    }

    /// Sends the messages, enforces the declared output contract, and
    /// records usage under `step`. On a contract violation exactly one
    /// repair reprompt is issued before failing.
    pub fn complete(
        &self,
        step: StepLabel,
        messages: &[AgentMessage],
        contract: ResponseContract,
    ) -> Result<(ParsedResponse, Usage), GatewayError> {
        if messages.is_empty() {
            return Err(GatewayError::Misuse("empty message list".to_string()));
        }
        if messages.iter().any(|m| m.content.trim().is_empty()) {
            return Err(GatewayError::Misuse("empty message content".to_string()));
        }

        let mut usage = Usage::default();
        let reply = self.send_with_retries(messages, &mut usage, step)?;
        match contracts::parse(contract, &reply.text) {
            Ok(parsed) => Ok((parsed, usage)),
            Err(violation) => {
                let mut repair = messages.to_vec();
                repair.push(AgentMessage::user(format!(
                    "Your previous response was:\n{}\n\nIt violated the required output format: {}. \
                     Respond again following the required format exactly, with no additional text.",
                    reply.text, violation
                )));
                // The repair call gets a single network attempt so the
                // total stays within 1 + retries + 1.
                let reply = self.send_once(&repair, &mut usage, step)?;
                match contracts::parse(contract, &reply.text) {
                    Ok(parsed) => Ok((parsed, usage)),
                    Err(message) => Err(GatewayError::Contract { message, raw: reply.text }),
                }
            }
        }
    }

    fn send_with_retries(
        &self,
        messages: &[AgentMessage],
        usage: &mut Usage,
        step: StepLabel,
    ) -> Result<ChatReply, GatewayError> {
        let mut attempt = 0u32;
        loop {
            match self.send_once(messages, usage, step) {
                Ok(reply) => return Ok(reply),
                Err(GatewayError::Backend(err)) if err.retryable() && attempt < self.config.retries => {
                    let delay = self.config.backoff_ms.saturating_mul(1 << attempt.min(16));
                    if delay > 0 {
                        std::thread::sleep(Duration::from_millis(delay));
                    }
                    attempt += 1;
                }
                Err(other) => return Err(other),
            }
        }
    }

    fn send_once(
        &self,
        messages: &[AgentMessage],
        usage: &mut Usage,
        step: StepLabel,
    ) -> Result<ChatReply, GatewayError> {
        let reply = self.backend.send(&self.config, messages)?;
        let cost = reply.prompt_tokens as f64 * self.config.prompt_price
            + reply.completion_tokens as f64 * self.config.completion_price;
        usage.prompt_tokens += reply.prompt_tokens;
        usage.completion_tokens += reply.completion_tokens;
        usage.calls += 1;
        usage.cost += cost;
        self.ledger.record(step, reply.prompt_tokens, reply.completion_tokens, cost);
        Ok(reply)
    }
}

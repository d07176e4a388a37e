//! Deterministic scripted backend for tests and offline runs.

use std::collections::VecDeque;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::backend::{BackendError, ChatBackend, ChatReply};
use super::{AgentMessage, BackendConfig};

/// Synthetic token accounting: one token per four characters, rounded up.
const CHARS_PER_TOKEN: u64 = 4;

/// One canned reply: a text completion or an injected failure.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    Text(String),
    Failure(MockFailure),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockFailure {
    Transport { transport_error: String },
    Http { http_status: u16, message: String },
}

impl MockReply {
    pub fn text(s: impl Into<String>) -> Self {
        MockReply::Text(s.into())
    }

    pub fn transport_error(message: impl Into<String>) -> Self {
        MockReply::Failure(MockFailure::Transport { transport_error: message.into() })
    }

    pub fn http_status(status: u16, message: impl Into<String>) -> Self {
        MockReply::Failure(MockFailure::Http { http_status: status, message: message.into() })
    }
}

/// A pattern rule: fires whenever the concatenated prompt contains the
/// substring, without consuming the ordered queue.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockRule {
    pub contains: String,
    pub response: MockReply,
}

/// On-disk script shape: optional pattern rules plus an ordered queue.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub queue: Vec<MockReply>,
}

/// Scripted backend. Pattern rules are checked first; otherwise replies
/// come from the queue in order. An exhausted queue is an explicit error,
/// never a silent reuse.
pub struct MockBackend {
    rules: Vec<MockRule>,
    queue: Mutex<VecDeque<MockReply>>,
    recorded: Mutex<Vec<Vec<AgentMessage>>>,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        MockBackend {
            rules: script.rules,
            queue: Mutex::new(script.queue.into()),
            recorded: Mutex::new(Vec::new()),
        }
    }

    pub fn from_queue<I: IntoIterator<Item = MockReply>>(queue: I) -> Self {
        MockBackend::new(MockScript { rules: Vec::new(), queue: queue.into_iter().collect() })
    }

    /// Every prompt this backend has received, in call order.
    pub fn recorded_prompts(&self) -> Vec<Vec<AgentMessage>> {
        self.recorded.lock().expect("mock lock").clone()
    }

    pub fn call_count(&self) -> usize {
        self.recorded.lock().expect("mock lock").len()
    }
}

impl ChatBackend for MockBackend {
    fn send(
        &self,
        _config: &BackendConfig,
        messages: &[AgentMessage],
    ) -> Result<ChatReply, BackendError> {
        self.recorded.lock().expect("mock lock").push(messages.to_vec());

        let prompt_text: String =
            messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n");
        let reply = if let Some(rule) = self.rules.iter().find(|r| prompt_text.contains(&r.contains)) {
            rule.response.clone()
        } else {
            match self.queue.lock().expect("mock lock").pop_front() {
                Some(reply) => reply,
                None => {
                    return Err(BackendError::Config(
                        "mock script exhausted: no canned response left for this call".to_string(),
                    ))
                }
            }
        };

        match reply {
            MockReply::Text(text) => {
                let prompt_tokens = (prompt_text.chars().count() as u64).div_ceil(CHARS_PER_TOKEN);
                let completion_tokens = (text.chars().count() as u64).div_ceil(CHARS_PER_TOKEN);
                Ok(ChatReply { text, prompt_tokens, completion_tokens })
            }
            MockReply::Failure(MockFailure::Transport { transport_error }) => {
                Err(BackendError::Transport(transport_error))
            }
            MockReply::Failure(MockFailure::Http { http_status, message }) => {
                Err(BackendError::Http { status: http_status, message })
            }
        }
    }

    fn fingerprint(&self, config: &BackendConfig) -> String {
        format!("mock:{}", config.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> BackendConfig {
        BackendConfig::default()
    }

    #[test]
    fn replays_queue_in_order() {
        let mock = MockBackend::from_queue([
            MockReply::text("one"),
            MockReply::text("two"),
            MockReply::text("three"),
        ]);
        let msg = [AgentMessage::user("hi")];
        for expected in ["one", "two", "three"] {
            let reply = mock.send(&config(), &msg).unwrap();
            assert_eq!(reply.text, expected);
        }
        assert_eq!(mock.call_count(), 3);
    }

    #[test]
    fn pattern_rule_bypasses_queue() {
        let mock = MockBackend::new(MockScript {
            rules: vec![MockRule {
                contains: "KnowledgeGraph".to_string(),
                response: MockReply::text("{\"results\": []}"),
            }],
            queue: vec![MockReply::text("queued")],
        });
        let reply = mock
            .send(&config(), &[AgentMessage::user("<KnowledgeGraph>...</KnowledgeGraph>")])
            .unwrap();
        assert_eq!(reply.text, "{\"results\": []}");
        // Queue untouched by the rule hit.
        let reply = mock.send(&config(), &[AgentMessage::user("other")]).unwrap();
        assert_eq!(reply.text, "queued");
    }

    #[test]
    fn exhausted_script_errors() {
        let mock = MockBackend::from_queue([]);
        let err = mock.send(&config(), &[AgentMessage::user("hi")]).unwrap_err();
        assert!(matches!(err, BackendError::Config(_)));
        assert!(!err.retryable());
    }

    #[test]
    fn no_calls_means_empty_log() {
        let mock = MockBackend::from_queue([MockReply::text("unused")]);
        assert!(mock.recorded_prompts().is_empty());
    }

    #[test]
    fn token_counts_follow_char_ratio() {
        let mock = MockBackend::from_queue([MockReply::text("12345678")]);
        let reply = mock.send(&config(), &[AgentMessage::user("abcd")]).unwrap();
        assert_eq!(reply.prompt_tokens, 1);
        assert_eq!(reply.completion_tokens, 2);
    }
}

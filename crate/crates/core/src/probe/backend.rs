//! OpenAI-style chat-completions wire types, an HTTP client and an
//! in-process mock speaking the same types.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::BackendConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    #[serde(default)]
    pub content: Option<String>,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: Some(content.into()),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "assistant".into(),
            content: Some(content.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_logprobs: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response_format: Option<Value>,
}

impl ChatRequest {
    /// Text of the last user message.
    pub fn prompt(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .and_then(|m| m.content.as_deref())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
    #[serde(default)]
    pub top_logprobs: Vec<TopLogprob>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceLogprobs {
    #[serde(default)]
    pub content: Option<Vec<TokenLogprob>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub message: ChatMessage,
    #[serde(default)]
    pub logprobs: Option<ChoiceLogprobs>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<Choice>,
}

impl ChatResponse {
    pub fn content(&self) -> &str {
        self.choices
            .first()
            .and_then(|c| c.message.content.as_deref())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    /// Worth retrying: timeouts, connection failures, 429 and 5xx.
    #[error("transient: {0}")]
    Transient(String),
    #[error("permanent: {0}")]
    Permanent(String),
}

pub trait Backend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<ChatResponse, BackendError>;

    fn supports_logprobs(&self) -> bool;

    /// Requests that reached the model (cache hits never get here).
    fn request_count(&self) -> usize;
}

/// Blocking HTTP client for an OpenAI-compatible endpoint.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
    logprobs: bool,
    requests: AtomicUsize,
}

impl HttpBackend {
    /// Reads the API key from the environment variable named in `cfg`; an
    /// empty variable name means the endpoint needs no key.
    pub fn new(cfg: &BackendConfig) -> Result<Self> {
        let api_key = if cfg.api_key_env.is_empty() {
            None
        } else {
            Some(std::env::var(&cfg.api_key_env).map_err(|_| {
                Error::Backend(format!(
                    "environment variable {} is not set",
                    cfg.api_key_env
                ))
            })?)
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::Backend(e.to_string()))?;
        Ok(HttpBackend {
            client,
            endpoint: cfg.endpoint.clone(),
            api_key,
            logprobs: cfg.logprobs,
            requests: AtomicUsize::new(0),
        })
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<ChatResponse, BackendError> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        let mut builder = self.client.post(&self.endpoint).json(request);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| {
            if e.is_timeout() || e.is_connect() || e.is_request() {
                BackendError::Transient(e.to_string())
            } else {
                BackendError::Permanent(e.to_string())
            }
        })?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Err(BackendError::Permanent(format!("HTTP {status}: {body}")));
        }
        response
            .json::<ChatResponse>()
            .map_err(|e| BackendError::Permanent(format!("bad response body: {e}")))
    }

    fn supports_logprobs(&self) -> bool {
        self.logprobs
    }

    fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

/// How the mock decides its replies.
#[derive(Debug, Clone, PartialEq)]
pub enum MockBehavior {
    /// Always answers with this text.
    Fixed(String),
    /// Statement text -> probability the mock believes it is true; unknown
    /// statements use `default`. The mock answers "yes" to
    /// "Is the following statement True?" iff it believes the statement,
    /// and reports log-probabilities consistent with the belief.
    Beliefs { beliefs: HashMap<String, f64>, default: f64 },
}

/// In-process backend that parses the binary prompt and replies in the
/// chat-completions format.
#[derive(Debug)]
pub struct MockBackend {
    behavior: MockBehavior,
    logprobs: bool,
    transient_failures: AtomicUsize,
    permanent_marker: Option<String>,
    requests: AtomicUsize,
}

// Keeps log-probabilities finite for beliefs of exactly 0 or 1.
const MIN_PROB: f64 = 1e-12;

impl MockBackend {
    pub fn new(behavior: MockBehavior) -> Self {
        MockBackend {
            behavior,
            logprobs: true,
            transient_failures: AtomicUsize::new(0),
            permanent_marker: None,
            requests: AtomicUsize::new(0),
        }
    }

    pub fn fixed(text: impl Into<String>) -> Self {
        Self::new(MockBehavior::Fixed(text.into()))
    }

    pub fn without_logprobs(mut self) -> Self {
        self.logprobs = false;
        self
    }

    /// The first `n` requests fail with a transient error.
    pub fn with_transient_failures(self, n: usize) -> Self {
        self.transient_failures.store(n, Ordering::SeqCst);
        self
    }

    /// Prompts containing `marker` fail permanently.
    pub fn with_permanent_failures_on(mut self, marker: impl Into<String>) -> Self {
        self.permanent_marker = Some(marker.into());
        self
    }

    fn reply(&self, request: &ChatRequest) -> (String, f64) {
        let prompt = request.prompt();
        match &self.behavior {
            MockBehavior::Fixed(text) => (text.clone(), 1.0),
            MockBehavior::Beliefs { beliefs, default } => {
                let statement = prompt
                    .lines()
                    .find_map(|l| l.strip_prefix("STATEMENT: "))
                    .unwrap_or_default();
                let p_true = beliefs.get(statement).copied().unwrap_or(*default);
                let asks_true = !prompt.contains("Is the following statement False?");
                let p_yes = if asks_true { p_true } else { 1.0 - p_true };
                let answer = if p_yes >= 0.5 { "Yes" } else { "No" };
                (answer.to_string(), p_yes)
            }
        }
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<ChatResponse, BackendError> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        let pending = self
            .transient_failures
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1));
        if pending.is_ok() {
            return Err(BackendError::Transient("mock: simulated overload".into()));
        }
        if let Some(marker) = &self.permanent_marker {
            if request.prompt().contains(marker.as_str()) {
                return Err(BackendError::Permanent("mock: rejected prompt".into()));
            }
        }

        let (answer, p_yes) = self.reply(request);
        let content = if request.response_format.is_some() {
            serde_json::json!({
                "reasoning": "mock reasoning",
                "answer": answer.to_lowercase(),
            })
            .to_string()
        } else {
            answer.clone()
        };
        let logprobs = (self.logprobs && request.logprobs == Some(true)).then(|| {
            let p_yes = p_yes.clamp(MIN_PROB, 1.0 - MIN_PROB);
            let (yes, no) = (p_yes.ln(), (1.0 - p_yes).ln());
            let top = match &self.behavior {
                MockBehavior::Fixed(_) => vec![TopLogprob {
                    token: answer.clone(),
                    logprob: 0.0,
                }],
                MockBehavior::Beliefs { .. } => vec![
                    TopLogprob { token: "Yes".into(), logprob: yes },
                    TopLogprob { token: "No".into(), logprob: no },
                ],
            };
            let chosen = top
                .iter()
                .find(|t| t.token == answer)
                .map_or(0.0, |t| t.logprob);
            ChoiceLogprobs {
                content: Some(vec![TokenLogprob {
                    token: answer.clone(),
                    logprob: chosen,
                    top_logprobs: top,
                }]),
            }
        });
        Ok(ChatResponse {
            choices: vec![Choice {
                message: ChatMessage::assistant(content),
                logprobs,
            }],
        })
    }

    fn supports_logprobs(&self) -> bool {
        self.logprobs
    }

    fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

//! OpenAI-style chat-completions backend.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{AgentBackend, AgentRequest, BackendError, Completion};
use crate::types::TokenUsage;

pub const API_KEY_ENV: &str = "QFLOW_API_KEY";
pub const BASE_URL_ENV: &str = "QFLOW_BASE_URL";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

fn default_model() -> String {
    "gpt-4o-mini".to_string()
}
fn default_temperature() -> f64 {
    0.1
}
fn default_max_tokens() -> u32 {
    2048
}
fn default_timeout_secs() -> f64 {
    60.0
}
fn default_max_retries() -> u32 {
    3
}
fn default_retry_delay_ms() -> u64 {
    500
}
fn default_max_in_flight() -> usize {
    4
}

/// Model and transport settings. Endpoint and credential are not part of
/// the file form; they come from the environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpConfig {
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_retry_delay_ms")]
    pub retry_delay_ms: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    /// Price per prompt token.
    #[serde(default)]
    pub price_prompt: f64,
    /// Price per completion token.
    #[serde(default)]
    pub price_completion: f64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            model: default_model(),
            temperature: default_temperature(),
            max_tokens: default_max_tokens(),
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            retry_delay_ms: default_retry_delay_ms(),
            max_in_flight: default_max_in_flight(),
            price_prompt: 0.0,
            price_completion: 0.0,
        }
    }
}

impl HttpConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs.max(0.0))
    }
}

/// Counting gate bounding concurrent requests.
struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    cap: usize,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(cap: usize) -> Self {
        Self {
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            cap: cap.max(1),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.cap {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

pub struct HttpBackend {
    base_url: String,
    api_key: Option<String>,
    config: HttpConfig,
    client: reqwest::blocking::Client,
    gate: Gate,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

enum Attempt {
    Done(Completion),
    Retry(BackendError),
    Fail(BackendError),
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, config: HttpConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| BackendError::TransportFailure(e.to_string()))?;
        Ok(Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            gate: Gate::new(config.max_in_flight),
            config,
            client,
        })
    }

    /// Reads the endpoint and credential from the environment.
    pub fn from_env(config: HttpConfig) -> Result<Self, BackendError> {
        let base = std::env::var(BASE_URL_ENV).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string());
        let key = std::env::var(API_KEY_ENV).ok();
        Self::new(base, key, config)
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    /// The JSON body sent for a request.
    pub fn request_body(&self, request: &AgentRequest) -> serde_json::Value {
        let mut system = request.system_prompt.clone();
        if !request.role_prompt.is_empty() {
            system.push_str("\n\n");
            system.push_str(&request.role_prompt);
        }
        let mut messages = vec![
            json!({"role": "system", "content": system}),
            json!({"role": "user", "content": request.query}),
        ];
        for m in &request.transcript {
            let speaker = m.role.as_deref().unwrap_or("dispatcher");
            messages.push(json!({"role": "user", "content": format!("[{speaker}]\n{}", m.content)}));
        }
        if let Some(notice) = &request.notice {
            messages.push(json!({"role": "user", "content": notice}));
        }
        json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        })
    }

    fn attempt(&self, body: &serde_json::Value, timeout: Duration) -> Attempt {
        let mut req = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .timeout(timeout)
            .json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Attempt::Retry(BackendError::Timeout),
            Err(e) => return Attempt::Retry(BackendError::TransportFailure(e.to_string())),
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) if e.is_timeout() => return Attempt::Retry(BackendError::Timeout),
            Err(e) => return Attempt::Retry(BackendError::TransportFailure(e.to_string())),
        };
        if !status.is_success() {
            let code = status.as_u16();
            return if code == 408 || code == 429 || status.is_server_error() {
                Attempt::Retry(BackendError::TransportFailure(format!("status {code}: {text}")))
            } else {
                Attempt::Fail(BackendError::NonRetryableApiError {
                    status: code,
                    body: text,
                })
            };
        }
        let parsed: ChatResponse = match serde_json::from_str(&text) {
            Ok(p) => p,
            Err(e) => return Attempt::Fail(BackendError::MalformedResponse(e.to_string())),
        };
        let Some(content) = parsed.choices.into_iter().next().and_then(|c| c.message.content) else {
            return Attempt::Fail(BackendError::MalformedResponse("no message content".into()));
        };
        let usage = parsed
            .usage
            .map(|u| TokenUsage::new(u.prompt_tokens, u.completion_tokens))
            .unwrap_or_default();
        Attempt::Done(Completion { content, usage })
    }
}

impl AgentBackend for HttpBackend {
    fn invoke(&self, request: &AgentRequest, timeout: Duration) -> Result<Completion, BackendError> {
        let body = self.request_body(request);
        let _permit = self.gate.acquire();
        let mut delay = Duration::from_millis(self.config.retry_delay_ms);
        let mut attempt = 0;
        loop {
            match self.attempt(&body, timeout) {
                Attempt::Done(c) => return Ok(c),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) if attempt >= self.config.max_retries => {
                    warn!("giving up after {} attempts: {e}", attempt + 1);
                    return Err(e);
                }
                Attempt::Retry(e) => {
                    debug!("attempt {} failed, retrying in {delay:?}: {e}", attempt + 1);
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
            }
        }
    }
}

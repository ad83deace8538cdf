//! Agent abstraction: the request an agent sees, the reply it returns, and
//! the backends that produce replies.

mod http;
mod prompt;
mod protocol;
mod scripted;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpBackend, HttpConfig, API_KEY_ENV, BASE_URL_ENV, DEFAULT_BASE_URL};
pub use prompt::{render_prompt, PromptError, NEXT_AVAIL_NODES, PREV_NODES};
pub use protocol::{format_marker, parse_next_node, ProtocolError};
pub use scripted::{FnBackend, ScriptStep, ScriptedBackend};

use crate::types::{Action, Message, RoleSet, TokenUsage};

/// Everything an agent is shown for one turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRequest {
    /// Acting role; `None` for the dispatcher turn at the start state.
    pub role: Option<String>,
    pub step: usize,
    pub system_prompt: String,
    pub role_prompt: String,
    pub query: String,
    pub transcript: Vec<Message>,
    pub prev_nodes: Vec<String>,
    pub next_avail_nodes: Vec<String>,
    /// Correction appended when a previous reply named an unavailable node.
    pub notice: Option<String>,
}

impl AgentRequest {
    pub fn with_role(mut self, role: Option<String>, role_prompt: impl Into<String>) -> Self {
        self.role = role;
        self.role_prompt = role_prompt.into();
        self
    }

    pub fn at_step(mut self, step: usize) -> Self {
        self.step = step;
        self
    }
}

/// Raw backend output before the next-node marker is interpreted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub content: String,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResponse {
    pub content: String,
    pub next_node: Action,
    pub usage: TokenUsage,
}

impl AgentResponse {
    pub fn parse(completion: Completion, roles: &RoleSet) -> Result<Self, ProtocolError> {
        let next_node = parse_next_node(&completion.content, roles)?;
        Ok(Self {
            content: completion.content,
            next_node,
            usage: completion.usage,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("agent call timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    TransportFailure(String),
    #[error("api error {status}: {body}")]
    NonRetryableApiError { status: u16, body: String },
    #[error("malformed api response: {0}")]
    MalformedResponse(String),
    #[error("script exhausted at step {0}")]
    ScriptExhausted(usize),
    #[error("{0}")]
    Other(String),
}

/// Something that can play an agent. Implementations must be shareable
/// across threads; each call is independent.
pub trait AgentBackend: Send + Sync {
    fn invoke(&self, request: &AgentRequest, timeout: Duration) -> Result<Completion, BackendError>;
}

impl<B: AgentBackend + ?Sized> AgentBackend for &B {
    fn invoke(&self, request: &AgentRequest, timeout: Duration) -> Result<Completion, BackendError> {
        (**self).invoke(request, timeout)
    }
}

impl<B: AgentBackend + ?Sized> AgentBackend for Box<B> {
    fn invoke(&self, request: &AgentRequest, timeout: Duration) -> Result<Completion, BackendError> {
        (**self).invoke(request, timeout)
    }
}

/// `p * n_p + c * n_c`.
pub fn cost(usage: TokenUsage, price_prompt: f64, price_completion: f64) -> f64 {
    price_prompt * usage.prompt_tokens as f64 + price_completion * usage.completion_tokens as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_formula() {
        let c = cost(TokenUsage::new(1000, 500), 1e-6, 2e-6);
        assert!((c - 0.002).abs() < 1e-15);
        assert_eq!(cost(TokenUsage::default(), 3.0, 4.0), 0.0);
    }
}

use std::time::Duration;

use super::{format_marker, AgentBackend, AgentRequest, BackendError, Completion};
use crate::types::{Action, TokenUsage};

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptStep {
    pub text: String,
    pub next: Action,
    pub usage: TokenUsage,
}

impl ScriptStep {
    pub fn new(text: impl Into<String>, next: Action, usage: TokenUsage) -> Self {
        Self {
            text: text.into(),
            next,
            usage,
        }
    }

    fn completion(&self) -> Completion {
        let content = if self.text.is_empty() {
            format_marker(&self.next)
        } else {
            format!("{}\n{}", self.text, format_marker(&self.next))
        };
        Completion {
            content,
            usage: self.usage,
        }
    }
}

/// Replays a fixed list of replies indexed by the request's step.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    steps: Vec<ScriptStep>,
    repeat: bool,
}

impl ScriptedBackend {
    pub fn new(steps: Vec<ScriptStep>) -> Self {
        Self {
            steps,
            repeat: false,
        }
    }

    /// Wraps around to the first step once the script runs out.
    pub fn repeating(steps: Vec<ScriptStep>) -> Self {
        Self {
            steps,
            repeat: true,
        }
    }

    /// A script that only routes: each step hands over to the given action.
    pub fn routes(next: impl IntoIterator<Item = Action>) -> Self {
        Self::new(
            next.into_iter()
                .map(|a| ScriptStep::new("", a, TokenUsage::default()))
                .collect(),
        )
    }
}

impl AgentBackend for ScriptedBackend {
    fn invoke(&self, request: &AgentRequest, _timeout: Duration) -> Result<Completion, BackendError> {
        let idx = if self.repeat && !self.steps.is_empty() {
            request.step % self.steps.len()
        } else {
            request.step
        };
        self.steps
            .get(idx)
            .map(ScriptStep::completion)
            .ok_or(BackendError::ScriptExhausted(request.step))
    }
}

/// Adapts a closure into a backend.
pub struct FnBackend<F>(pub F);

impl<F> AgentBackend for FnBackend<F>
where
    F: Fn(&AgentRequest) -> Result<Completion, BackendError> + Send + Sync,
{
    fn invoke(&self, request: &AgentRequest, _timeout: Duration) -> Result<Completion, BackendError> {
        (self.0)(request)
    }
}

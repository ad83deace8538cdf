use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use super::AgentRequest;
use crate::types::Message;

pub const PREV_NODES: &str = "{prev_nodes}";
pub const NEXT_AVAIL_NODES: &str = "{next_avail_nodes}";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("template lacks placeholder {0}")]
    MissingPlaceholder(&'static str),
    #[error("template contains unresolved placeholder {0}")]
    UnresolvedPlaceholder(String),
}

static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\{[A-Za-z_][A-Za-z0-9_]*\}").expect("placeholder regex"));

/// Substitutes the executed and available node lists into a system-prompt
/// template. Both lists are rendered comma separated.
pub fn render_prompt(
    template: &str,
    prev_nodes: &[String],
    next_avail: &[String],
    query: &str,
    transcript: &[Message],
) -> Result<AgentRequest, PromptError> {
    for p in [PREV_NODES, NEXT_AVAIL_NODES] {
        if !template.contains(p) {
            return Err(PromptError::MissingPlaceholder(p));
        }
    }
    if let Some(m) = PLACEHOLDER
        .find_iter(template)
        .find(|m| m.as_str() != PREV_NODES && m.as_str() != NEXT_AVAIL_NODES)
    {
        return Err(PromptError::UnresolvedPlaceholder(m.as_str().to_string()));
    }
    let system_prompt = template
        .replace(PREV_NODES, &prev_nodes.join(", "))
        .replace(NEXT_AVAIL_NODES, &next_avail.join(", "));
    Ok(AgentRequest {
        role: None,
        step: 0,
        system_prompt,
        role_prompt: String::new(),
        query: query.to_string(),
        transcript: transcript.to_vec(),
        prev_nodes: prev_nodes.to_vec(),
        next_avail_nodes: next_avail.to_vec(),
        notice: None,
    })
}

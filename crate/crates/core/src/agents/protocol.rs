use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use crate::types::{Action, RoleSet, END};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("no `/* next_node: ... */` marker found")]
    NoMarkerFound,
    #[error("marker names unknown role `{0}`")]
    UnknownRoleName(String),
}

static MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"/\*\s*next_node\s*:\s*(.*?)\s*\*/").expect("marker regex"));

/// Marker names that select the terminal action.
const END_ALIASES: [&str; 3] = [END, "FINAL ANSWER", "FINAL_ANSWER"];

/// Formats the marker an agent is expected to end its reply with.
pub fn format_marker(action: &Action) -> String {
    format!("/* next_node: {} */", action.name())
}

/// Extracts the next action from an agent reply.
///
/// The last marker in the text wins; the name inside is trimmed and matched
/// exactly against the role set.
pub fn parse_next_node(content: &str, roles: &RoleSet) -> Result<Action, ProtocolError> {
    let name = MARKER
        .captures_iter(content)
        .last()
        .and_then(|c| c.get(1))
        .map(|m| m.as_str().trim())
        .ok_or(ProtocolError::NoMarkerFound)?;
    if END_ALIASES.contains(&name) {
        return Ok(Action::End);
    }
    if roles.contains(name) {
        Ok(Action::Goto(name.to_string()))
    } else {
        Err(ProtocolError::UnknownRoleName(name.to_string()))
    }
}

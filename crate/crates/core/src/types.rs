//! Domain types shared by every module: roles, actions, states, edges and traces.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Wire name of the terminal action.
pub const END: &str = "END";
/// Wire name of the synthetic state that precedes the first agent.
pub const START: &str = "START";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoleError {
    #[error("role set is empty")]
    Empty,
    #[error("duplicate role name `{0}`")]
    DuplicateRoleName(String),
    #[error("role name must be non-empty")]
    EmptyRoleName,
    #[error("role name `{0}` is reserved")]
    ReservedRoleName(String),
    #[error("role `{name}` has invalid cost {cost}")]
    InvalidCost { name: String, cost: f64 },
    #[error("no role may terminate the workflow")]
    NoTerminatingRole,
    #[error("unknown role `{0}`")]
    UnknownRole(String),
}

fn default_cost() -> f64 {
    1.0
}

/// A named agent identity: its prompt, whether it may end the workflow, and
/// the cost weight applied to its execution penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleSpec {
    pub name: String,
    #[serde(default)]
    pub prompt: String,
    #[serde(default)]
    pub may_terminate: bool,
    #[serde(default = "default_cost")]
    pub cost: f64,
    #[serde(default)]
    pub description: String,
}

impl RoleSpec {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            prompt: String::new(),
            may_terminate: false,
            cost: 1.0,
            description: String::new(),
        }
    }

    pub fn terminating(mut self) -> Self {
        self.may_terminate = true;
        self
    }

    pub fn with_cost(mut self, cost: f64) -> Self {
        self.cost = cost;
        self
    }

    pub fn with_prompt(mut self, prompt: impl Into<String>) -> Self {
        self.prompt = prompt.into();
        self
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }
}

/// A validated, ordered collection of roles with unique names.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct RoleSet {
    roles: Vec<RoleSpec>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

/// Checks uniqueness, naming and cost constraints and that at least one role
/// can terminate the workflow.
pub fn validate_role_set(roles: Vec<RoleSpec>) -> Result<RoleSet, RoleError> {
    if roles.is_empty() {
        return Err(RoleError::Empty);
    }
    let mut index = HashMap::with_capacity(roles.len());
    for (i, role) in roles.iter().enumerate() {
        let name = role.name.trim();
        if name.is_empty() {
            return Err(RoleError::EmptyRoleName);
        }
        if name != role.name {
            // markers are matched after trimming, so padded names could never be selected
            return Err(RoleError::ReservedRoleName(role.name.clone()));
        }
        if role.name == END || role.name == START {
            return Err(RoleError::ReservedRoleName(role.name.clone()));
        }
        if !role.cost.is_finite() || role.cost < 0.0 {
            return Err(RoleError::InvalidCost {
                name: role.name.clone(),
                cost: role.cost,
            });
        }
        if index.insert(role.name.clone(), i).is_some() {
            return Err(RoleError::DuplicateRoleName(role.name.clone()));
        }
    }
    if !roles.iter().any(|r| r.may_terminate) {
        return Err(RoleError::NoTerminatingRole);
    }
    Ok(RoleSet { roles, index })
}

impl RoleSet {
    pub fn get(&self, name: &str) -> Option<&RoleSpec> {
        self.index.get(name).map(|&i| &self.roles[i])
    }

    pub fn require(&self, name: &str) -> Result<&RoleSpec, RoleError> {
        self.get(name)
            .ok_or_else(|| RoleError::UnknownRole(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &RoleSpec> {
        self.roles.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.roles.iter().map(|r| r.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn as_slice(&self) -> &[RoleSpec] {
        &self.roles
    }
}

impl<'de> Deserialize<'de> for RoleSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let roles = Vec::<RoleSpec>::deserialize(deserializer)?;
        validate_role_set(roles).map_err(serde::de::Error::custom)
    }
}

/// The choice an agent makes after acting: hand over to a role, or end.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Action {
    Goto(String),
    End,
}

impl Action {
    pub fn goto(name: impl Into<String>) -> Self {
        Action::Goto(name.into())
    }

    /// Name used for tie-breaking, display, and on the wire.
    pub fn name(&self) -> &str {
        match self {
            Action::Goto(name) => name,
            Action::End => END,
        }
    }

    pub fn is_end(&self) -> bool {
        matches!(self, Action::End)
    }

    /// The state reached by taking this action; `None` for the absorbing end.
    pub fn successor(&self) -> Option<State> {
        match self {
            Action::Goto(name) => Some(State::Role(name.clone())),
            Action::End => None,
        }
    }
}

impl From<String> for Action {
    fn from(s: String) -> Self {
        if s == END {
            Action::End
        } else {
            Action::Goto(s)
        }
    }
}

impl From<Action> for String {
    fn from(a: Action) -> Self {
        match a {
            Action::Goto(name) => name,
            Action::End => END.to_string(),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Learning state: the identity of the agent that just acted, or `Start`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum State {
    Start,
    Role(String),
}

impl State {
    pub fn role(name: impl Into<String>) -> Self {
        State::Role(name.into())
    }

    pub fn name(&self) -> &str {
        match self {
            State::Start => START,
            State::Role(name) => name,
        }
    }

    pub fn current_role(&self) -> Option<&str> {
        match self {
            State::Start => None,
            State::Role(name) => Some(name),
        }
    }
}

impl From<String> for State {
    fn from(s: String) -> Self {
        if s == START {
            State::Start
        } else {
            State::Role(s)
        }
    }
}

impl From<State> for String {
    fn from(s: State) -> Self {
        match s {
            State::Start => START.to_string(),
            State::Role(name) => name,
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One transition of a workflow annotated with its reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedEdge {
    pub from: State,
    pub to: Action,
    pub reward: f64,
    pub step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Pruned,
    StepLimit,
    AgentError,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Pruned => "pruned",
            Outcome::StepLimit => "step_limit",
            Outcome::AgentError => "agent_error",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A message in the shared conversation; `role` is `None` for the dispatcher
/// turn taken from the start state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Option<String>,
    pub content: String,
}

/// Token counts for a single agent call or an aggregate of calls.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn new(prompt_tokens: u64, completion_tokens: u64) -> Self {
        Self {
            prompt_tokens,
            completion_tokens,
        }
    }

    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl std::ops::Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage {
            prompt_tokens: self.prompt_tokens + rhs.prompt_tokens,
            completion_tokens: self.completion_tokens + rhs.completion_tokens,
        }
    }
}

impl std::ops::AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: TokenUsage) {
        *self = *self + rhs;
    }
}

/// Where an action in a decision space came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    TopK,
    Exploration,
    ColdStart,
}

/// The set of successors offered to an agent, each tagged with its provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionSpace {
    pub entries: Vec<(Action, Provenance)>,
}

impl DecisionSpace {
    pub fn actions(&self) -> impl Iterator<Item = &Action> {
        self.entries.iter().map(|(a, _)| a)
    }

    pub fn contains(&self, action: &Action) -> bool {
        self.entries.iter().any(|(a, _)| a == action)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.actions().map(|a| a.name().to_string()).collect()
    }

    pub fn explored(&self) -> Option<&Action> {
        self.entries
            .iter()
            .find(|(_, p)| *p == Provenance::Exploration)
            .map(|(a, _)| a)
    }
}

/// Everything one query produced: the weighted edge list, who ran, the
/// outcome and the conversation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub episode: u64,
    pub query: String,
    pub edges: Vec<WeightedEdge>,
    pub executed_roles: Vec<String>,
    pub cumulative_reward: f64,
    pub outcome: Outcome,
    pub transcript: Vec<Message>,
    /// Decision space offered at each step, aligned with `edges`.
    #[serde(default)]
    pub decision_spaces: Vec<DecisionSpace>,
    #[serde(default)]
    pub usage: TokenUsage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EpisodeTrace {
    /// Sum of edge rewards, independent of the stored running total.
    pub fn edge_reward_sum(&self) -> f64 {
        self.edges.iter().map(|e| e.reward).sum()
    }

    /// Number of role executions.
    pub fn len(&self) -> usize {
        self.executed_roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.executed_roles.is_empty()
    }

    /// Role execution counts, keyed by name.
    pub fn execution_counts(&self) -> BTreeMap<&str, u64> {
        let mut counts = BTreeMap::new();
        for role in &self.executed_roles {
            *counts.entry(role.as_str()).or_insert(0) += 1;
        }
        counts
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_roles() -> Vec<RoleSpec> {
        vec![
            RoleSpec::new("Algorithm Designer"),
            RoleSpec::new("Programming Expert").terminating(),
        ]
    }

    #[test]
    fn minimal_valid_set() {
        let set = validate_role_set(two_roles()).unwrap();
        assert_eq!(set.len(), 2);
        assert!(set.get("Programming Expert").unwrap().may_terminate);
    }

    #[test]
    fn duplicate_names_rejected() {
        let roles = vec![RoleSpec::new("A").terminating(), RoleSpec::new("A")];
        assert_eq!(
            validate_role_set(roles),
            Err(RoleError::DuplicateRoleName("A".into()))
        );
    }

    #[test]
    fn needs_a_terminating_role() {
        let roles = vec![RoleSpec::new("A"), RoleSpec::new("B")];
        assert_eq!(validate_role_set(roles), Err(RoleError::NoTerminatingRole));
    }

    #[test]
    fn rejects_empty_reserved_and_negative_cost() {
        assert_eq!(validate_role_set(vec![]), Err(RoleError::Empty));
        assert_eq!(
            validate_role_set(vec![RoleSpec::new("").terminating()]),
            Err(RoleError::EmptyRoleName)
        );
        assert!(matches!(
            validate_role_set(vec![RoleSpec::new(END).terminating()]),
            Err(RoleError::ReservedRoleName(_))
        ));
        assert!(matches!(
            validate_role_set(vec![RoleSpec::new("A").terminating().with_cost(-1.0)]),
            Err(RoleError::InvalidCost { .. })
        ));
    }

    #[test]
    fn action_and_state_wire_names() {
        assert_eq!(Action::from("END".to_string()), Action::End);
        assert_eq!(
            Action::from("Test Engineer".to_string()),
            Action::goto("Test Engineer")
        );
        assert_eq!(State::from("START".to_string()), State::Start);
        assert_eq!(serde_json::to_string(&Action::End).unwrap(), "\"END\"");
        assert_eq!(Action::goto("B").successor(), Some(State::role("B")));
        assert_eq!(Action::End.successor(), None);
    }

    #[test]
    fn role_set_deserialization_validates() {
        let bad = r#"[{"name":"A"},{"name":"A","may_terminate":true}]"#;
        assert!(serde_json::from_str::<RoleSet>(bad).is_err());
        let good = r#"[{"name":"A"},{"name":"B","may_terminate":true,"cost":2.0}]"#;
        let set: RoleSet = serde_json::from_str(good).unwrap();
        assert_eq!(set.get("B").unwrap().cost, 2.0);
    }
}

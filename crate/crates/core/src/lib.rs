//! Learned routing for multi-agent workflows.
//!
//! Agents are roles in a directed graph. Each step, the acting role is offered
//! a small set of successors ranked by a tabular Q-function, picks one via a
//! `/* next_node: X */` marker, and the resulting weighted edge feeds a
//! temporal-difference update once the episode ends.

pub mod agents;
pub mod bench;
pub mod config;
pub mod orchestrator;
pub mod prompts;
pub mod qlearn;
pub mod reward;
pub mod types;

pub use agents::{
    AgentBackend, AgentRequest, AgentResponse, BackendError, Completion, HttpBackend, HttpConfig, ScriptedBackend,
};
pub use config::{Config, ConfigError, EngineConfig};
pub use orchestrator::{available_actions, should_prune, Engine, EngineError, EpisodeContext};
pub use qlearn::{decay_epsilon, decision_space, greedy_policy, top_k, QError, QTable, QTableDocument};
pub use reward::{step_reward, terminal_reward, RewardConfig, RoleStats};
pub use types::{
    validate_role_set, Action, DecisionSpace, EpisodeTrace, Message, Outcome, Provenance, RoleSet, RoleSpec, State,
    TokenUsage, WeightedEdge, END, START,
};

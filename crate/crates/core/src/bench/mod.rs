//! Scripted environments, training loops, reports and exports for studying
//! the learner without a language model.

mod oracle;
mod report;
mod sankey;
mod scenario;

use thiserror::Error;

use crate::orchestrator::EngineError;

pub use oracle::{role_mdp, value_iteration_oracle, FiniteMdp, OracleSolution, Transition};
pub use report::{EpisodeRecord, RoleRecord, RunReport};
pub use sankey::{export_sankey, Flow, SankeyFlows, AGENT_ERROR_SINK, PRUNED_SINK, STEP_LIMIT_SINK};
pub use scenario::{
    builtin, run_scenario, train, train_from, RoleScript, ScenarioBackend, ScenarioSpec, TaskSpec, Training,
    BUILTIN_SCENARIOS, SCENARIO_SYSTEM_PROMPT,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid scenario: {0}")]
    ScenarioInvalid(String),
    #[error("no traces to export")]
    EmptyInput,
    #[error("invalid decision process: {0}")]
    InvalidMdp(String),
    #[error("value iteration did not converge within {0} sweeps")]
    NonConvergent(usize),
    #[error("rewards are not stationary: {0}")]
    NonStationary(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

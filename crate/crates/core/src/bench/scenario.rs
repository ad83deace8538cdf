//! Scripted task environments.
//!
//! A scenario is a role set, a list of tasks and, per role, the successor the
//! agent playing it would normally hand over to. Whether a task is solved is
//! a pure function of the roles visited so far; the terminating role only
//! ends the workflow once it is.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::report::{EpisodeRecord, RunReport};
use super::BenchError;
use crate::agents::{format_marker, AgentBackend, AgentRequest, BackendError, Completion};
use crate::config::EngineConfig;
use crate::orchestrator::Engine;
use crate::types::{validate_role_set, Action, EpisodeTrace, RoleSet, RoleSpec, TokenUsage, END, START};

/// Template used for scripted runs; the scripted agents only read the lists.
pub const SCENARIO_SYSTEM_PROMPT: &str = "Already executed nodes: {prev_nodes}\nAvailable next nodes: {next_avail_nodes}";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub id: String,
    #[serde(default = "default_difficulty")]
    pub difficulty: String,
    /// Roles that must have acted before the task can be accepted.
    #[serde(default)]
    pub requires: Vec<String>,
    /// Times the terminating role sends a finished attempt back for repair.
    #[serde(default)]
    pub rejections: usize,
}

fn default_difficulty() -> String {
    "normal".into()
}

/// What the agent playing `role` intends to do next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleScript {
    /// A role name, or `START` for the dispatcher.
    pub role: String,
    /// Preferred successor; `END` means finish once the task is solved.
    pub next: String,
    /// Successor used when `next` is `END` but the task is not yet solved.
    #[serde(default)]
    pub retry: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub episodes: u64,
    #[serde(default)]
    pub seed: u64,
    /// Probability that an agent follows its script when the scripted
    /// successor is on offer; otherwise it picks uniformly from the offer.
    #[serde(default = "default_fidelity")]
    pub fidelity: f64,
    /// Roles whose participation makes every task unsolvable. A traitor
    /// ignores its script and keeps the turn for itself whenever it can.
    #[serde(default)]
    pub traitors: Vec<String>,
    #[serde(default)]
    pub usage_per_turn: TokenUsage,
    #[serde(default)]
    pub price_prompt: f64,
    #[serde(default)]
    pub price_completion: f64,
    #[serde(default)]
    pub engine: EngineConfig,
    pub roles: Vec<RoleSpec>,
    #[serde(default)]
    pub tasks: Vec<TaskSpec>,
    #[serde(default)]
    pub scripts: Vec<RoleScript>,
}

fn default_fidelity() -> f64 {
    1.0
}

pub const BUILTIN_SCENARIOS: [&str; 6] = ["traitor", "mixed", "loop", "chain", "branch", "traitor_layout"];

/// One of the scenarios shipped with the crate.
pub fn builtin(name: &str) -> Option<ScenarioSpec> {
    let text = match name {
        "traitor" => include_str!("../../scenarios/traitor.toml"),
        "mixed" => include_str!("../../scenarios/mixed.toml"),
        "loop" => include_str!("../../scenarios/loop.toml"),
        "chain" => include_str!("../../scenarios/chain.toml"),
        "branch" => include_str!("../../scenarios/branch.toml"),
        "traitor_layout" => include_str!("../../scenarios/traitor_layout.toml"),
        _ => return None,
    };
    Some(ScenarioSpec::from_toml_str(text).expect("built-in scenario parses"))
}

impl ScenarioSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, BenchError> {
        toml::from_str(text).map_err(|e| BenchError::ScenarioInvalid(e.to_string()))
    }

    /// Reads a scenario file, or a built-in scenario when `path` names one.
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        if !path.exists() {
            if let Some(spec) = path.to_str().and_then(builtin) {
                return Ok(spec);
            }
        }
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::ScenarioInvalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn role_set(&self) -> Result<RoleSet, BenchError> {
        validate_role_set(self.roles.clone()).map_err(|e| BenchError::ScenarioInvalid(e.to_string()))
    }

    /// Checks that every name the scenario mentions is a role of the scenario.
    pub fn validate(&self) -> Result<RoleSet, BenchError> {
        let roles = self.role_set()?;
        let bad = |m: String| Err(BenchError::ScenarioInvalid(m));
        if !(0.0..=1.0).contains(&self.fidelity) {
            return bad(format!("fidelity must lie in [0, 1], got {}", self.fidelity));
        }
        if self.episodes > 0 && self.tasks.is_empty() {
            return bad("scenario has episodes but no tasks".into());
        }
        let mut ids = HashSet::new();
        for t in &self.tasks {
            if !ids.insert(&t.id) {
                return bad(format!("duplicate task id `{}`", t.id));
            }
            if let Some(r) = t.requires.iter().find(|r| !roles.contains(r)) {
                return bad(format!("task `{}` requires unknown role `{r}`", t.id));
            }
        }
        if let Some(r) = self.traitors.iter().find(|r| !roles.contains(r)) {
            return bad(format!("unknown traitor role `{r}`"));
        }
        let mut scripted = HashSet::new();
        for s in &self.scripts {
            if s.role != START && !roles.contains(&s.role) {
                return bad(format!("script for unknown role `{}`", s.role));
            }
            if !scripted.insert(&s.role) {
                return bad(format!("two scripts for `{}`", s.role));
            }
            for target in std::iter::once(&s.next).chain(&s.retry) {
                if target != END && !roles.contains(target) {
                    return bad(format!("script for `{}` routes to unknown role `{target}`", s.role));
                }
            }
            if s.next == END && (s.role == START || !roles.get(&s.role).is_some_and(|r| r.may_terminate)) {
                return bad(format!("`{}` may not end the workflow", s.role));
            }
        }
        Ok(roles)
    }

    pub fn task_for(&self, episode: u64) -> Option<&TaskSpec> {
        if self.tasks.is_empty() {
            return None;
        }
        self.tasks.get((episode % self.tasks.len() as u64) as usize)
    }
}

/// Plays every role of a scenario. Decisions depend only on the task, the
/// roles visited so far, the offered successors and the seeded random source.
pub struct ScenarioBackend {
    tasks: BTreeMap<String, TaskSpec>,
    scripts: BTreeMap<String, RoleScript>,
    traitors: HashSet<String>,
    fidelity: f64,
    usage: TokenUsage,
    rng: Mutex<ChaCha8Rng>,
}

impl ScenarioBackend {
    pub fn new(spec: &ScenarioSpec, seed: u64) -> Self {
        Self {
            tasks: spec.tasks.iter().map(|t| (t.id.clone(), t.clone())).collect(),
            scripts: spec.scripts.iter().map(|s| (s.role.clone(), s.clone())).collect(),
            traitors: spec.traitors.iter().cloned().collect(),
            fidelity: spec.fidelity,
            usage: spec.usage_per_turn,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    /// Solved once every required role has acted, no traitor has, and the
    /// terminating role has already turned the work back enough times.
    fn solved(task: &TaskSpec, visited: &[String], traitors: &HashSet<String>, terminator: &str) -> bool {
        if visited.iter().any(|r| traitors.contains(r)) {
            return false;
        }
        let Some(ready_at) = ready_index(task, visited) else {
            return false;
        };
        let reviews = visited[ready_at..].iter().filter(|r| *r == terminator).count();
        reviews > task.rejections
    }

    fn decide(&self, request: &AgentRequest) -> Result<Action, BackendError> {
        let task = self
            .tasks
            .get(&request.query)
            .ok_or_else(|| BackendError::Other(format!("unknown task `{}`", request.query)))?;
        let acting = request.role.as_deref().unwrap_or(START);
        let mut visited = request.prev_nodes.clone();
        if let Some(r) = &request.role {
            visited.push(r.clone());
        }
        let solved = Self::solved(task, &visited, &self.traitors, acting);
        let offered: Vec<Action> = request
            .next_avail_nodes
            .iter()
            .map(|n| if n == END { Action::End } else { Action::goto(n.as_str()) })
            .filter(|a| solved || !a.is_end())
            .collect();
        if offered.is_empty() {
            return Err(BackendError::Other("nothing to hand over to".into()));
        }

        let intended = self.scripts.get(acting).map(|s| {
            if s.next == END && !solved {
                s.retry.as_deref().map(Action::goto)
            } else if s.next == END {
                Some(Action::End)
            } else {
                Some(Action::goto(s.next.as_str()))
            }
        });
        let mut rng = self.rng.lock().unwrap_or_else(|e| e.into_inner());
        if self.traitors.contains(acting) {
            let stall = Action::goto(acting);
            if offered.contains(&stall) {
                return Ok(stall);
            }
        }
        if let Some(Some(a)) = intended {
            if offered.contains(&a) && rng.random::<f64>() < self.fidelity {
                return Ok(a);
            }
        }
        Ok(offered[rng.random_range(0..offered.len())].clone())
    }
}

/// Position just after the last required role first appears, in order.
fn ready_index(task: &TaskSpec, visited: &[String]) -> Option<usize> {
    let mut at = 0;
    for req in &task.requires {
        let pos = visited.iter().position(|r| r == req)?;
        at = at.max(pos + 1);
    }
    Some(at)
}

impl AgentBackend for ScenarioBackend {
    fn invoke(&self, request: &AgentRequest, _timeout: Duration) -> Result<Completion, BackendError> {
        let next = self.decide(request)?;
        let speaker = request.role.as_deref().unwrap_or("dispatcher");
        Ok(Completion {
            content: format!("[{speaker}] step {} on {}\n{}", request.step, request.query, format_marker(&next)),
            usage: self.usage,
        })
    }
}

/// The learner, its traces and the summary of a scenario run.
#[derive(Debug, Clone)]
pub struct Training {
    pub engine: Engine,
    pub traces: Vec<EpisodeTrace>,
    pub report: RunReport,
}

/// Trains a fresh learner on `spec` with engine settings `cfg`.
pub fn train(spec: &ScenarioSpec, cfg: &EngineConfig) -> Result<Training, BenchError> {
    let roles = spec.validate()?;
    let engine = Engine::new(roles, *cfg, spec.seed)?
        .with_prompts(SCENARIO_SYSTEM_PROMPT.to_string(), String::new());
    train_from(spec, engine)
}

/// Continues training an existing learner on `spec`.
pub fn train_from(spec: &ScenarioSpec, mut engine: Engine) -> Result<Training, BenchError> {
    let roles = spec.validate()?;
    if roles.as_slice() != engine.roles().as_slice() {
        return Err(BenchError::ScenarioInvalid("learner roles differ from scenario roles".into()));
    }
    let backend = ScenarioBackend::new(spec, spec.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut traces = Vec::with_capacity(spec.episodes as usize);
    let mut records = Vec::with_capacity(spec.episodes as usize);
    for i in 0..spec.episodes {
        let task = spec.task_for(i).expect("validated: tasks present");
        let trace = engine.run_episode(&task.id, &backend)?;
        records.push(EpisodeRecord::new(&trace, &task.difficulty, spec.price_prompt, spec.price_completion));
        traces.push(trace);
    }
    let report = RunReport::new(spec, &engine, records);
    Ok(Training { engine, traces, report })
}

/// Runs `spec` and returns its report; deterministic given spec and config.
pub fn run_scenario(spec: &ScenarioSpec, cfg: &EngineConfig) -> Result<RunReport, BenchError> {
    train(spec, cfg).map(|t| t.report)
}

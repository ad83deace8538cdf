//! Runs one episode per query: offers each agent a decision space, records
//! the weighted edge it chooses, stops on `END`, pruning or the step limit,
//! and feeds accepted episodes back into the Q-table and role statistics.

use std::time::Duration;

use log::debug;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::agents::{AgentBackend, AgentRequest, AgentResponse, BackendError, Completion, render_prompt};
use crate::config::{Config, ConfigError, EngineConfig};
use crate::prompts;
use crate::qlearn::{decay_epsilon, decision_space, QError, QTable, QTableDocument};
use crate::reward::{record_episode, step_reward, terminal_reward, RewardError, RoleStats};
use crate::types::{
    Action, DecisionSpace, EpisodeTrace, Message, Outcome, RoleSet, State, TokenUsage, WeightedEdge,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    QLearning(#[from] QError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("no action available from state {0}")]
    EmptyDecisionSpace(State),
    #[error("q-table learning parameters ({q_alpha}, {q_gamma}) differ from config ({alpha}, {gamma})")]
    HyperparameterMismatch {
        q_alpha: f64,
        q_gamma: f64,
        alpha: f64,
        gamma: f64,
    },
}

/// Why an agent turn could not produce a usable edge.
#[derive(Debug, Error)]
enum TurnError {
    #[error("agent backend failure: {0}")]
    Backend(#[from] BackendError),
    #[error("invalid next node: {0}")]
    InvalidNextNode(String),
}

/// Mutable bookkeeping for the episode in progress.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeContext {
    pub query: String,
    pub step: usize,
    pub state: State,
    pub executed: Vec<String>,
    pub cumulative_reward: f64,
    pub transcript: Vec<Message>,
    pub episode_index: u64,
}

impl EpisodeContext {
    pub fn new(query: impl Into<String>, episode_index: u64) -> Self {
        Self {
            query: query.into(),
            step: 0,
            state: State::Start,
            executed: Vec::new(),
            cumulative_reward: 0.0,
            transcript: Vec::new(),
            episode_index,
        }
    }
}

/// Actions offered from `state`: every role, plus `END` when something has
/// already executed and the current role may terminate.
pub fn available_actions(state: &State, roles: &RoleSet, executed: &[String]) -> Vec<Action> {
    let may_end = !executed.is_empty()
        && state
            .current_role()
            .and_then(|r| roles.get(r))
            .is_some_and(|r| r.may_terminate);
    let mut actions: Vec<Action> = roles.names().map(Action::goto).collect();
    if may_end {
        actions.push(Action::End);
    }
    actions
}

/// Actions available once a role state has been entered during an episode.
fn successor_actions(state: &State, roles: &RoleSet) -> Vec<Action> {
    match state {
        State::Start => available_actions(state, roles, &[]),
        State::Role(name) => available_actions(state, roles, std::slice::from_ref(name)),
    }
}

/// `Some(Pruned)` once the running reward is strictly below the threshold,
/// `Some(StepLimit)` once the step budget is spent.
pub fn should_prune(ctx: &EpisodeContext, cfg: &EngineConfig) -> Option<Outcome> {
    if ctx.cumulative_reward < cfg.prune_threshold {
        Some(Outcome::Pruned)
    } else if ctx.step >= cfg.max_steps {
        Some(Outcome::StepLimit)
    } else {
        None
    }
}

/// A learner bound to a role set: owns the Q-table, the role statistics,
/// the exploration schedule and the random source.
#[derive(Debug, Clone)]
pub struct Engine {
    roles: RoleSet,
    cfg: EngineConfig,
    system_prompt: String,
    dispatcher_prompt: String,
    q: QTable,
    stats: RoleStats,
    epsilon: f64,
    episodes: u64,
    rng: ChaCha8Rng,
    timeout: Duration,
}

impl Engine {
    pub fn new(roles: RoleSet, cfg: EngineConfig, seed: u64) -> Result<Self, EngineError> {
        cfg.validate(&roles)?;
        let q = QTable::new(cfg.alpha, cfg.gamma)?;
        let stats = RoleStats::new(&roles);
        Ok(Self {
            system_prompt: prompts::code().system.to_string(),
            dispatcher_prompt: prompts::DISPATCHER_PROMPT.to_string(),
            epsilon: cfg.epsilon0,
            roles,
            cfg,
            q,
            stats,
            episodes: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            timeout: Duration::from_secs(60),
        })
    }

    pub fn from_config(config: &Config, seed: u64) -> Result<Self, EngineError> {
        Ok(Self::new(config.roles.clone(), config.engine, seed)?
            .with_prompts(config.system_prompt.clone(), config.dispatcher_prompt.clone())
            .with_timeout(config.backend.timeout()))
    }

    pub fn with_prompts(mut self, system: String, dispatcher: String) -> Self {
        self.system_prompt = system;
        self.dispatcher_prompt = dispatcher;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Continues from a saved learning state.
    pub fn resume(mut self, doc: &QTableDocument) -> Result<Self, EngineError> {
        let q = doc.to_qtable()?;
        if q.alpha() != self.cfg.alpha || q.gamma() != self.cfg.gamma {
            return Err(EngineError::HyperparameterMismatch {
                q_alpha: q.alpha(),
                q_gamma: q.gamma(),
                alpha: self.cfg.alpha,
                gamma: self.cfg.gamma,
            });
        }
        self.q = q;
        if let Some(stats) = doc.role_stats() {
            self.stats = stats.clone();
            self.stats.extend_roles(&self.roles);
        }
        self.episodes = doc.episodes();
        self.epsilon = self.cfg.epsilon0;
        for _ in 0..self.episodes {
            self.epsilon = decay_epsilon(self.epsilon, self.cfg.epsilon_decay, self.cfg.epsilon_min);
        }
        Ok(self)
    }

    pub fn to_document(&self) -> QTableDocument {
        QTableDocument::new(&self.q, self.episodes, Some(self.stats.clone()))
    }

    pub fn qtable(&self) -> &QTable {
        &self.q
    }

    pub fn stats(&self) -> &RoleStats {
        &self.stats
    }

    pub fn roles(&self) -> &RoleSet {
        &self.roles
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Number of episodes run so far; the index of the next episode.
    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn in_cold_start(&self) -> bool {
        self.episodes < self.cfg.cold_start_episodes
    }

    fn request(&self, ctx: &EpisodeContext, space: &DecisionSpace) -> AgentRequest {
        let acted = ctx.executed.len().saturating_sub(usize::from(ctx.state != State::Start));
        let prev = &ctx.executed[..acted];
        let offered = space.names();
        let mut req = render_prompt(&self.system_prompt, prev, &offered, &ctx.query, &ctx.transcript)
            .expect("system prompt validated at construction");
        let described: Vec<String> = space
            .actions()
            .filter_map(|a| self.roles.get(a.name()))
            .filter(|r| !r.description.is_empty())
            .map(|r| format!("- {}: {}", r.name, r.description))
            .collect();
        if !described.is_empty() {
            req.system_prompt.push_str("\n\nNode roles:\n");
            req.system_prompt.push_str(&described.join("\n"));
        }
        let role = ctx.state.current_role().map(str::to_string);
        let role_prompt = match &role {
            Some(name) => self.roles.get(name).map(|r| r.prompt.clone()).unwrap_or_default(),
            None => self.dispatcher_prompt.clone(),
        };
        req.with_role(role, role_prompt).at_step(ctx.step)
    }

    /// Invokes the acting agent; one retry with a notice if the reply names
    /// a node outside the offered space.
    fn take_turn(
        &self,
        backend: &dyn AgentBackend,
        mut request: AgentRequest,
        space: &DecisionSpace,
        usage: &mut TokenUsage,
    ) -> Result<AgentResponse, TurnError> {
        let mut last_problem = String::new();
        for _ in 0..2 {
            let completion: Completion = backend.invoke(&request, self.timeout)?;
            *usage += completion.usage;
            let problem = match AgentResponse::parse(completion, &self.roles) {
                Ok(resp) if space.contains(&resp.next_node) => return Ok(resp),
                Ok(resp) => format!("`{}` is not an available next node", resp.next_node),
                Err(e) => e.to_string(),
            };
            debug!("step {}: {problem}; retrying", request.step);
            request.notice = Some(format!(
                "Your previous reply could not be routed: {problem}. Choose exactly one of: {}. \
                 End your reply with /* next_node: <name> */.",
                space.names().join(", ")
            ));
            last_problem = problem;
        }
        Err(TurnError::InvalidNextNode(last_problem))
    }

    /// Runs one query to completion and, for `Success` and `StepLimit`
    /// outcomes, applies the edge list to the Q-table and role statistics.
    pub fn run_episode(&mut self, query: &str, backend: &dyn AgentBackend) -> Result<EpisodeTrace, EngineError> {
        let cold = self.in_cold_start();
        let mut ctx = EpisodeContext::new(query, self.episodes);
        let mut edges = Vec::new();
        let mut spaces = Vec::new();
        let mut usage = TokenUsage::default();
        let mut error = None;

        let outcome = loop {
            let available = available_actions(&ctx.state, &self.roles, &ctx.executed);
            if available.is_empty() {
                return Err(EngineError::EmptyDecisionSpace(ctx.state.clone()));
            }
            let space = decision_space(
                &self.q,
                &ctx.state,
                &available,
                self.cfg.top_k,
                self.epsilon,
                cold,
                &mut self.rng,
            )?;
            let request = self.request(&ctx, &space);
            let response = match self.take_turn(backend, request, &space, &mut usage) {
                Ok(r) => r,
                Err(e) => {
                    debug!("episode {} step {}: {e}", ctx.episode_index, ctx.step);
                    error = Some(e.to_string());
                    break Outcome::AgentError;
                }
            };
            ctx.transcript.push(Message {
                role: ctx.state.current_role().map(str::to_string),
                content: response.content,
            });

            let action = response.next_node;
            let reward = match &action {
                Action::End => terminal_reward(ctx.executed.len(), &self.cfg.reward),
                Action::Goto(_) => step_reward(&self.cfg.reward, &self.roles, &self.stats, &ctx.state, &action)?,
            };
            debug!(
                "episode {} step {}: {} -> {} ({reward})",
                ctx.episode_index, ctx.step, ctx.state, action
            );
            edges.push(WeightedEdge {
                from: ctx.state.clone(),
                to: action.clone(),
                reward,
                step: ctx.step,
            });
            spaces.push(space);
            ctx.cumulative_reward += reward;
            ctx.step += 1;

            match action {
                Action::End => break Outcome::Success,
                Action::Goto(name) => {
                    ctx.executed.push(name.clone());
                    ctx.state = State::Role(name);
                }
            }
            if let Some(stop) = should_prune(&ctx, &self.cfg) {
                break stop;
            }
        };

        let trace = EpisodeTrace {
            episode: ctx.episode_index,
            query: ctx.query,
            edges,
            executed_roles: ctx.executed,
            cumulative_reward: ctx.cumulative_reward,
            outcome,
            transcript: ctx.transcript,
            decision_spaces: spaces,
            usage,
            error,
        };

        if matches!(outcome, Outcome::Success | Outcome::StepLimit) {
            self.learn(&trace)?;
        }
        self.episodes += 1;
        self.epsilon = decay_epsilon(self.epsilon, self.cfg.epsilon_decay, self.cfg.epsilon_min);
        Ok(trace)
    }

    /// Applies the episode's edges in path order, then the role statistics.
    fn learn(&mut self, trace: &EpisodeTrace) -> Result<(), EngineError> {
        for edge in &trace.edges {
            let next_state = edge.to.successor();
            let next_actions = next_state
                .as_ref()
                .map(|s| successor_actions(s, &self.roles))
                .unwrap_or_default();
            let next = next_state.as_ref().map(|s| (s, next_actions.as_slice()));
            self.q.td_update(&edge.from, &edge.to, edge.reward, next)?;
        }
        record_episode(&mut self.stats, trace);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::ScriptedBackend;
    use crate::types::{validate_role_set, RoleSpec};

    fn roles() -> RoleSet {
        validate_role_set(vec![
            RoleSpec::new("Researcher"),
            RoleSpec::new("Programming Expert"),
            RoleSpec::new("Test Engineer").terminating(),
        ])
        .unwrap()
    }

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn start_never_offers_end() {
        let a = available_actions(&State::Start, &roles(), &[]);
        assert_eq!(a.len(), 3);
        assert!(!a.contains(&Action::End));
    }

    #[test]
    fn terminating_role_offers_end_after_execution() {
        let a = available_actions(&State::role("Test Engineer"), &roles(), &names(&["Programming Expert"]));
        assert!(a.contains(&Action::End));
        let a = available_actions(&State::role("Researcher"), &roles(), &names(&["Programming Expert"]));
        assert!(!a.contains(&Action::End));
        let a = available_actions(&State::role("Test Engineer"), &roles(), &[]);
        assert!(!a.contains(&Action::End));
    }

    #[test]
    fn prune_boundaries() {
        let cfg = EngineConfig::default();
        let mut ctx = EpisodeContext::new("q", 0);
        ctx.cumulative_reward = -51.0;
        assert_eq!(should_prune(&ctx, &cfg), Some(Outcome::Pruned));
        ctx.cumulative_reward = -50.0;
        assert_eq!(should_prune(&ctx, &cfg), None);
        ctx.step = 12;
        assert_eq!(should_prune(&ctx, &cfg), Some(Outcome::StepLimit));
        ctx.step = 11;
        assert_eq!(should_prune(&ctx, &cfg), None);
    }

    #[test]
    fn straight_line_success() {
        let roles = validate_role_set(vec![RoleSpec::new("A"), RoleSpec::new("B").terminating()]).unwrap();
        let mut engine = Engine::new(roles, EngineConfig::default(), 0).unwrap();
        let backend = ScriptedBackend::routes([Action::goto("A"), Action::goto("B"), Action::End]);
        let trace = engine.run_episode("task", &backend).unwrap();
        assert_eq!(trace.outcome, Outcome::Success);
        let rewards: Vec<f64> = trace.edges.iter().map(|e| e.reward).collect();
        assert_eq!(rewards, [-10.0, -10.0, 100.0]);
        assert_eq!(trace.cumulative_reward, 80.0);
        assert_eq!(trace.executed_roles, names(&["A", "B"]));
        assert_eq!(engine.stats().counts("A").unwrap().n_success, 1);
        // path-order updates: START->A then A->B then B->END, all from zero
        let q = engine.qtable();
        assert!((q.get(&State::Start, &Action::goto("A")) + 1.0).abs() < 1e-12);
        assert!((q.get(&State::role("A"), &Action::goto("B")) + 1.0).abs() < 1e-12);
        assert!((q.get(&State::role("B"), &Action::End) - 10.0).abs() < 1e-12);
        assert_eq!(engine.episodes(), 1);
        assert!((engine.epsilon() - 0.285).abs() < 1e-12);
    }

    #[test]
    fn invalid_node_is_retried_once_then_agent_error() {
        let roles = validate_role_set(vec![RoleSpec::new("A"), RoleSpec::new("B").terminating()]).unwrap();
        let mut engine = Engine::new(roles, EngineConfig::default(), 0).unwrap();
        // END is never offered from the start state.
        let backend = ScriptedBackend::routes([Action::End]);
        let trace = engine.run_episode("task", &backend).unwrap();
        assert_eq!(trace.outcome, Outcome::AgentError);
        assert!(trace.error.unwrap().contains("invalid next node"));
        assert!(engine.qtable().is_empty());
    }

    #[test]
    fn backend_failure_is_agent_error() {
        let roles = validate_role_set(vec![RoleSpec::new("A"), RoleSpec::new("B").terminating()]).unwrap();
        let mut engine = Engine::new(roles, EngineConfig::default(), 0).unwrap();
        let backend = ScriptedBackend::routes([Action::goto("A")]);
        let trace = engine.run_episode("task", &backend).unwrap();
        assert_eq!(trace.outcome, Outcome::AgentError);
        assert_eq!(trace.edges.len(), 1);
        assert!(engine.qtable().is_empty());
        assert_eq!(engine.stats().counts("A").unwrap().n_execute, 0);
    }
}

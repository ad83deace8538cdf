use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::scenario::ScenarioSpec;
use super::BenchError;
use crate::agents::cost;
use crate::orchestrator::Engine;
use crate::reward::success_rate;
use crate::types::{EpisodeTrace, Outcome, TokenUsage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: u64,
    pub task: String,
    pub difficulty: String,
    pub outcome: Outcome,
    /// Number of role executions.
    pub length: usize,
    pub steps: usize,
    pub cumulative_reward: f64,
    pub usage: TokenUsage,
    pub cost: f64,
}

impl EpisodeRecord {
    pub fn new(trace: &EpisodeTrace, difficulty: &str, price_prompt: f64, price_completion: f64) -> Self {
        Self {
            episode: trace.episode,
            task: trace.query.clone(),
            difficulty: difficulty.to_string(),
            outcome: trace.outcome,
            length: trace.executed_roles.len(),
            steps: trace.edges.len(),
            cumulative_reward: trace.cumulative_reward,
            usage: trace.usage,
            cost: cost(trace.usage, price_prompt, price_completion),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleRecord {
    pub role: String,
    pub n_execute: u64,
    pub n_success: u64,
    pub success_rate: f64,
    /// Final Q-value of handing over to this role, keyed by the handing state.
    pub q_from: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub episodes: Vec<EpisodeRecord>,
    pub roles: Vec<RoleRecord>,
    /// Successes over episodes; 0 when there were no episodes.
    pub pass_rate: f64,
    pub pass_rate_defined: bool,
    /// Mean role executions of successful episodes after cold start, by difficulty.
    pub mean_length: BTreeMap<String, f64>,
    pub total_usage: TokenUsage,
    pub total_cost: f64,
}

impl RunReport {
    pub fn new(spec: &ScenarioSpec, engine: &Engine, episodes: Vec<EpisodeRecord>) -> Self {
        let successes = episodes.iter().filter(|e| e.outcome == Outcome::Success).count();
        let pass_rate_defined = !episodes.is_empty();
        let pass_rate = if pass_rate_defined {
            successes as f64 / episodes.len() as f64
        } else {
            0.0
        };

        let cold = engine.config().cold_start_episodes;
        let mut lengths: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for e in episodes.iter().filter(|e| e.episode >= cold && e.outcome == Outcome::Success) {
            let slot = lengths.entry(e.difficulty.clone()).or_default();
            slot.0 += e.length;
            slot.1 += 1;
        }
        let mean_length = lengths
            .into_iter()
            .map(|(d, (sum, n))| (d, sum as f64 / n as f64))
            .collect();

        let q = engine.qtable();
        let roles = engine
            .roles()
            .iter()
            .map(|r| {
                let counts = engine.stats().counts(&r.name).unwrap_or_default();
                let q_from = q
                    .iter()
                    .filter(|(_, a, _)| a.name() == r.name)
                    .map(|(s, _, e)| (s.name().to_string(), e.q))
                    .collect();
                RoleRecord {
                    role: r.name.clone(),
                    n_execute: counts.n_execute,
                    n_success: counts.n_success,
                    success_rate: success_rate(engine.stats(), &r.name).unwrap_or(0.0),
                    q_from,
                }
            })
            .collect();

        let total_usage = episodes.iter().fold(TokenUsage::default(), |acc, e| acc + e.usage);
        let total_cost = episodes.iter().map(|e| e.cost).sum();
        Self {
            scenario: spec.name.clone(),
            seed: spec.seed,
            episodes,
            roles,
            pass_rate,
            pass_rate_defined,
            mean_length,
            total_usage,
            total_cost,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn episodes_csv<W: Write>(&self, out: W) -> Result<(), BenchError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "episode",
            "task",
            "difficulty",
            "outcome",
            "length",
            "steps",
            "cumulative_reward",
            "prompt_tokens",
            "completion_tokens",
            "cost",
        ])?;
        for e in &self.episodes {
            w.write_record([
                e.episode.to_string(),
                e.task.clone(),
                e.difficulty.clone(),
                e.outcome.as_str().to_string(),
                e.length.to_string(),
                e.steps.to_string(),
                e.cumulative_reward.to_string(),
                e.usage.prompt_tokens.to_string(),
                e.usage.completion_tokens.to_string(),
                e.cost.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// One row per (role, handing state) pair, plus the role's counters.
    pub fn roles_csv<W: Write>(&self, out: W) -> Result<(), BenchError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["role", "n_execute", "n_success", "success_rate", "from_state", "q"])?;
        for r in &self.roles {
            let head = [
                r.role.clone(),
                r.n_execute.to_string(),
                r.n_success.to_string(),
                r.success_rate.to_string(),
            ];
            if r.q_from.is_empty() {
                w.write_record(head.iter().cloned().chain([String::new(), String::new()]))?;
            }
            for (s, q) in &r.q_from {
                w.write_record(head.iter().cloned().chain([s.clone(), q.to_string()]))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

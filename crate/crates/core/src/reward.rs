//! Per-transition rewards and per-role success statistics.
//!
//! Every component is a `(default, scale)` pair whose magnitude is
//! `default * scale`. A hand-over to role `b` from state `s` earns
//!
//! ```text
//! r = -exec * cost(b) - edge + success_rate_scale * P_success(b) - [b == s] * repeat
//! ```
//!
//! and choosing `END` earns `success - lambda_p * max(0, min_path_len - path_len)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Action, EpisodeTrace, Outcome, RoleSet, State};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("unknown role `{0}`")]
    UnknownRole(String),
    #[error("step reward requested for the terminal action")]
    TerminalAction,
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
}

/// A reward or penalty component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub default: f64,
    pub scale: f64,
}

impl Component {
    pub const fn new(default: f64, scale: f64) -> Self {
        Self { default, scale }
    }

    pub fn value(&self) -> f64 {
        component_reward(self.default, self.scale)
    }
}

pub fn component_reward(default: f64, scale: f64) -> f64 {
    default * scale
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Penalty for executing a role, further multiplied by the role's cost weight.
    pub exec_penalty: Component,
    /// Extra penalty when a role hands over to itself.
    pub repeat_penalty: Component,
    /// Flat per-edge penalty, zero by default.
    pub edge_penalty: Component,
    /// Multiplier on the role's historical success rate.
    pub success_rate_scale: f64,
    pub task_success_reward: Component,
    /// Weight of the short-path penalty on `END`.
    pub lambda_p: f64,
    pub min_path_len: u32,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            exec_penalty: Component::new(5.0, 2.0),
            repeat_penalty: Component::new(10.0, 1.0),
            edge_penalty: Component::new(0.0, 10.0),
            success_rate_scale: 5.0,
            task_success_reward: Component::new(100.0, 1.0),
            lambda_p: 10.0,
            min_path_len: 2,
        }
    }
}

impl RewardConfig {
    /// Checks non-negativity and that every role's execution penalty strictly
    /// outweighs the largest possible success-rate bonus.
    pub fn validate(&self, roles: &RoleSet) -> Result<(), RewardError> {
        let comps = [
            ("exec_penalty", self.exec_penalty),
            ("repeat_penalty", self.repeat_penalty),
            ("edge_penalty", self.edge_penalty),
            ("task_success_reward", self.task_success_reward),
        ];
        for (name, c) in comps {
            if !(c.default.is_finite() && c.scale.is_finite()) || c.default < 0.0 || c.scale < 0.0
            {
                return Err(RewardError::InvalidConfig(format!(
                    "{name} must be finite and non-negative"
                )));
            }
        }
        for (name, v) in [
            ("success_rate_scale", self.success_rate_scale),
            ("lambda_p", self.lambda_p),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(RewardError::InvalidConfig(format!(
                    "{name} must be finite and non-negative"
                )));
            }
        }
        for role in roles.iter() {
            let margin = self.exec_penalty.value() * role.cost + self.edge_penalty.value()
                - self.success_rate_scale;
            if margin <= 0.0 {
                return Err(RewardError::InvalidConfig(format!(
                    "execution penalty for `{}` ({}) does not exceed the success-rate bonus ({})",
                    role.name,
                    self.exec_penalty.value() * role.cost + self.edge_penalty.value(),
                    self.success_rate_scale
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleCounts {
    pub n_execute: u64,
    pub n_success: u64,
}

/// Execution and success counters per role.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoleStats {
    counts: BTreeMap<String, RoleCounts>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoleStatsRecord {
    role: String,
    n_execute: u64,
    n_success: u64,
}

impl Serialize for RoleStats {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.counts.iter().map(|(role, c)| RoleStatsRecord {
            role: role.clone(),
            n_execute: c.n_execute,
            n_success: c.n_success,
        }))
    }
}

impl<'de> Deserialize<'de> for RoleStats {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let records = Vec::<RoleStatsRecord>::deserialize(deserializer)?;
        let mut counts = BTreeMap::new();
        for r in records {
            if r.n_success > r.n_execute {
                return Err(serde::de::Error::custom(format!(
                    "role `{}` has more successes than executions",
                    r.role
                )));
            }
            counts.insert(
                r.role,
                RoleCounts {
                    n_execute: r.n_execute,
                    n_success: r.n_success,
                },
            );
        }
        Ok(RoleStats { counts })
    }
}

impl RoleStats {
    /// Zeroed counters for every role in the set.
    pub fn new(roles: &RoleSet) -> Self {
        Self {
            counts: roles
                .names()
                .map(|n| (n.to_string(), RoleCounts::default()))
                .collect(),
        }
    }

    pub fn counts(&self, role: &str) -> Option<RoleCounts> {
        self.counts.get(role).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, RoleCounts)> {
        self.counts.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Overwrites the counters of one role. Fails if successes exceed executions.
    pub fn set(&mut self, role: &str, n_execute: u64, n_success: u64) -> Result<(), RewardError> {
        if n_success > n_execute {
            return Err(RewardError::InvalidConfig(format!(
                "role `{role}` has more successes than executions"
            )));
        }
        self.counts.insert(
            role.to_string(),
            RoleCounts {
                n_execute,
                n_success,
            },
        );
        Ok(())
    }

    /// Adds any role of `roles` missing from the table with zero counters.
    pub fn extend_roles(&mut self, roles: &RoleSet) {
        for name in roles.names() {
            self.counts.entry(name.to_string()).or_default();
        }
    }
}

/// `n_success / n_execute`, with a never-executed role scoring 0.
pub fn success_rate(stats: &RoleStats, role: &str) -> Result<f64, RewardError> {
    let c = stats
        .counts(role)
        .ok_or_else(|| RewardError::UnknownRole(role.to_string()))?;
    if c.n_execute == 0 {
        Ok(0.0)
    } else {
        Ok(c.n_success as f64 / c.n_execute as f64)
    }
}

/// Reward for handing over from `state` to a role.
pub fn step_reward(
    cfg: &RewardConfig,
    roles: &RoleSet,
    stats: &RoleStats,
    state: &State,
    next: &Action,
) -> Result<f64, RewardError> {
    let Action::Goto(name) = next else {
        return Err(RewardError::TerminalAction);
    };
    let role = roles
        .get(name)
        .ok_or_else(|| RewardError::UnknownRole(name.clone()))?;
    let rate = success_rate(stats, name)?;
    let mut r = -cfg.exec_penalty.value() * role.cost - cfg.edge_penalty.value()
        + cfg.success_rate_scale * rate;
    if state.current_role() == Some(name.as_str()) {
        r -= cfg.repeat_penalty.value();
    }
    Ok(r)
}

/// Reward for an agent-chosen `END` after `path_len` role executions.
pub fn terminal_reward(path_len: usize, cfg: &RewardConfig) -> f64 {
    let shortfall = (cfg.min_path_len as f64 - path_len as f64).max(0.0);
    cfg.task_success_reward.value() - cfg.lambda_p * shortfall
}

/// Folds a finished episode into the counters.
pub fn record_episode(stats: &mut RoleStats, trace: &EpisodeTrace) {
    let success = trace.outcome == Outcome::Success;
    for (role, n) in trace.execution_counts() {
        let c = stats.counts.entry(role.to_string()).or_default();
        c.n_execute += n;
        if success {
            c.n_success += n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{validate_role_set, RoleSpec};

    fn roles() -> RoleSet {
        validate_role_set(vec![
            RoleSpec::new("A"),
            RoleSpec::new("B").terminating(),
        ])
        .unwrap()
    }

    fn trace(executed: &[&str], outcome: Outcome) -> EpisodeTrace {
        EpisodeTrace {
            episode: 0,
            query: String::new(),
            edges: vec![],
            executed_roles: executed.iter().map(|s| s.to_string()).collect(),
            cumulative_reward: 0.0,
            outcome,
            transcript: vec![],
            decision_spaces: vec![],
            usage: Default::default(),
            error: None,
        }
    }

    #[test]
    fn component_magnitudes() {
        assert_eq!(component_reward(5.0, 2.0), 10.0);
        assert_eq!(component_reward(10.0, 1.0), 10.0);
        assert_eq!(component_reward(0.0, 7.0), 0.0);
    }

    #[test]
    fn success_rate_cases() {
        let mut stats = RoleStats::new(&roles());
        stats.set("A", 4, 3).unwrap();
        assert_eq!(success_rate(&stats, "A").unwrap(), 0.75);
        assert_eq!(success_rate(&stats, "B").unwrap(), 0.0);
        stats.set("B", 5, 5).unwrap();
        assert_eq!(success_rate(&stats, "B").unwrap(), 1.0);
        assert_eq!(
            success_rate(&stats, "Z"),
            Err(RewardError::UnknownRole("Z".into()))
        );
        assert!(stats.set("A", 1, 2).is_err());
    }

    #[test]
    fn step_reward_branches() {
        let cfg = RewardConfig::default();
        let roles = roles();
        let mut stats = RoleStats::new(&roles);
        let a = Action::goto("A");
        assert_eq!(
            step_reward(&cfg, &roles, &stats, &State::Start, &a).unwrap(),
            -10.0
        );
        assert_eq!(
            step_reward(&cfg, &roles, &stats, &State::role("A"), &a).unwrap(),
            -20.0
        );
        stats.set("A", 2, 2).unwrap();
        assert_eq!(
            step_reward(&cfg, &roles, &stats, &State::role("B"), &a).unwrap(),
            -5.0
        );
        assert_eq!(
            step_reward(&cfg, &roles, &stats, &State::Start, &Action::End),
            Err(RewardError::TerminalAction)
        );
        assert!(matches!(
            step_reward(&cfg, &roles, &stats, &State::Start, &Action::goto("Z")),
            Err(RewardError::UnknownRole(_))
        ));
    }

    #[test]
    fn cost_weight_scales_execution_penalty() {
        let roles = validate_role_set(vec![RoleSpec::new("A").terminating().with_cost(1.5)]).unwrap();
        let stats = RoleStats::new(&roles);
        let r = step_reward(
            &RewardConfig::default(),
            &roles,
            &stats,
            &State::Start,
            &Action::goto("A"),
        )
        .unwrap();
        assert_eq!(r, -15.0);
    }

    #[test]
    fn terminal_reward_cases() {
        let cfg = RewardConfig::default();
        assert_eq!(terminal_reward(5, &cfg), 100.0);
        assert_eq!(terminal_reward(1, &cfg), 90.0);
        let no_min = RewardConfig {
            min_path_len: 0,
            ..cfg
        };
        assert_eq!(terminal_reward(0, &no_min), 100.0);
        assert_eq!(terminal_reward(0, &cfg), 80.0);
    }

    #[test]
    fn record_episode_counts() {
        let mut stats = RoleStats::new(&roles());
        record_episode(&mut stats, &trace(&["A", "B"], Outcome::Success));
        assert_eq!(stats.counts("A").unwrap(), RoleCounts { n_execute: 1, n_success: 1 });
        assert_eq!(stats.counts("B").unwrap(), RoleCounts { n_execute: 1, n_success: 1 });

        record_episode(&mut stats, &trace(&["A", "A", "B"], Outcome::Pruned));
        assert_eq!(stats.counts("A").unwrap(), RoleCounts { n_execute: 3, n_success: 1 });
        assert_eq!(stats.counts("B").unwrap(), RoleCounts { n_execute: 2, n_success: 1 });

        let before = stats.clone();
        record_episode(&mut stats, &trace(&[], Outcome::Success));
        assert_eq!(stats, before);
    }

    #[test]
    fn config_validation() {
        let roles = roles();
        assert!(RewardConfig::default().validate(&roles).is_ok());
        let weak = RewardConfig {
            exec_penalty: Component::new(2.0, 2.0),
            ..Default::default()
        };
        assert!(weak.validate(&roles).is_err());
        let negative = RewardConfig {
            lambda_p: -1.0,
            ..Default::default()
        };
        assert!(negative.validate(&roles).is_err());
        let cheap = validate_role_set(vec![RoleSpec::new("A").terminating().with_cost(0.5)]).unwrap();
        assert!(RewardConfig::default().validate(&cheap).is_err());
    }

    #[test]
    fn stats_serde_round_trip() {
        let mut stats = RoleStats::new(&roles());
        stats.set("A", 7, 3).unwrap();
        let json = serde_json::to_string(&stats).unwrap();
        let back: RoleStats = serde_json::from_str(&json).unwrap();
        assert_eq!(back, stats);
        assert!(serde_json::from_str::<RoleStats>(r#"[{"role":"A","n_execute":1,"n_success":2}]"#).is_err());
    }
}

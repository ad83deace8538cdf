//! Exact action values of small deterministic decision processes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::reward::RewardConfig;
use crate::types::{RoleSet, END, START};

const TOLERANCE: f64 = 1e-12;
const MAX_SWEEPS: usize = 1_000_000;

/// One deterministic transition. `next == None` is terminal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: String,
    pub action: String,
    pub reward: f64,
    pub next: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteMdp {
    pub gamma: f64,
    pub transitions: Vec<Transition>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub q: BTreeMap<(String, String), f64>,
    pub sweeps: usize,
}

impl OracleSolution {
    pub fn value(&self, state: &str, action: &str) -> Option<f64> {
        self.q.get(&(state.to_string(), action.to_string())).copied()
    }

    /// All maximizing actions at `state`, within `tol`.
    pub fn greedy(&self, state: &str, tol: f64) -> Vec<String> {
        let row: Vec<(&String, f64)> = self
            .q
            .iter()
            .filter(|((s, _), _)| s == state)
            .map(|((_, a), v)| (a, *v))
            .collect();
        let best = row.iter().map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
        row.into_iter()
            .filter(|(_, v)| best - v <= tol)
            .map(|(a, _)| a.clone())
            .collect()
    }

    pub fn states(&self) -> Vec<String> {
        let mut s: Vec<String> = self.q.keys().map(|(s, _)| s.clone()).collect();
        s.dedup();
        s
    }
}

/// Sweeps the Bellman optimality operator until no value moves by more
/// than 1e-12.
pub fn value_iteration_oracle(mdp: &FiniteMdp) -> Result<OracleSolution, BenchError> {
    if !(0.0..1.0).contains(&mdp.gamma) {
        return Err(BenchError::InvalidMdp(format!("gamma must lie in [0, 1), got {}", mdp.gamma)));
    }
    let mut q: BTreeMap<(String, String), f64> = BTreeMap::new();
    for t in &mdp.transitions {
        if !t.reward.is_finite() {
            return Err(BenchError::InvalidMdp(format!("non-finite reward on {} -> {}", t.state, t.action)));
        }
        if q.insert((t.state.clone(), t.action.clone()), 0.0).is_some() {
            return Err(BenchError::InvalidMdp(format!("duplicate transition {} -> {}", t.state, t.action)));
        }
    }
    let state_value = |q: &BTreeMap<(String, String), f64>, s: &str| {
        q.range((s.to_string(), String::new())..)
            .take_while(|((st, _), _)| st == s)
            .map(|(_, v)| *v)
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
            .unwrap_or(0.0)
    };
    for sweep in 1..=MAX_SWEEPS {
        let mut delta: f64 = 0.0;
        let mut next_q = q.clone();
        for t in &mdp.transitions {
            let future = t.next.as_deref().map_or(0.0, |s| state_value(&q, s));
            let v = t.reward + mdp.gamma * future;
            let slot = next_q.get_mut(&(t.state.clone(), t.action.clone())).expect("seeded");
            delta = delta.max((v - *slot).abs());
            *slot = v;
        }
        q = next_q;
        if delta <= TOLERANCE {
            return Ok(OracleSolution { q, sweeps: sweep });
        }
    }
    Err(BenchError::NonConvergent(MAX_SWEEPS))
}

/// The decision process a learner faces on `roles` when rewards do not
/// depend on history: no success-rate term and no short-path penalty.
pub fn role_mdp(roles: &RoleSet, reward: &RewardConfig, gamma: f64) -> Result<FiniteMdp, BenchError> {
    if reward.success_rate_scale != 0.0 {
        return Err(BenchError::NonStationary("success-rate reward depends on run history".into()));
    }
    if reward.lambda_p != 0.0 && reward.min_path_len > 1 {
        return Err(BenchError::NonStationary("short-path penalty depends on path length".into()));
    }
    let exec = reward.exec_penalty.value();
    let repeat = reward.repeat_penalty.value();
    let edge = reward.edge_penalty.value();
    let finish = reward.task_success_reward.value();

    let mut transitions = Vec::new();
    let states = std::iter::once(START.to_string()).chain(roles.names().map(str::to_string));
    for s in states {
        for r in roles.iter() {
            let mut reward = -exec * r.cost - edge;
            if r.name == s {
                reward -= repeat;
            }
            transitions.push(Transition {
                state: s.clone(),
                action: r.name.clone(),
                reward,
                next: Some(r.name.clone()),
            });
        }
        if roles.get(&s).is_some_and(|r| r.may_terminate) {
            transitions.push(Transition {
                state: s.clone(),
                action: END.to_string(),
                reward: finish,
                next: None,
            });
        }
    }
    Ok(FiniteMdp { gamma, transitions })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str, a: &str, r: f64, next: Option<&str>) -> Transition {
        Transition {
            state: s.into(),
            action: a.into(),
            reward: r,
            next: next.map(str::to_string),
        }
    }

    #[test]
    fn one_step() {
        let mdp = FiniteMdp {
            gamma: 0.9,
            transitions: vec![t("s", "END", 100.0, None)],
        };
        assert_eq!(value_iteration_oracle(&mdp).unwrap().value("s", "END"), Some(100.0));
    }

    #[test]
    fn two_step_chain() {
        let mdp = FiniteMdp {
            gamma: 0.9,
            transitions: vec![t("s0", "go", -10.0, Some("s1")), t("s1", "END", 100.0, None)],
        };
        let sol = value_iteration_oracle(&mdp).unwrap();
        assert!((sol.value("s0", "go").unwrap() - 80.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_undiscounted() {
        let mdp = FiniteMdp {
            gamma: 1.0,
            transitions: vec![t("s", "END", 1.0, None)],
        };
        assert!(matches!(value_iteration_oracle(&mdp), Err(BenchError::InvalidMdp(_))));
    }
}

//! Tabular Q-learning: the value table, temporal-difference updates, top-k
//! extraction, epsilon-greedy decision spaces and persistence.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reward::RoleStats;
use crate::types::{Action, DecisionSpace, Provenance, State};

pub const QTABLE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum QError {
    #[error("reward is not finite: {0}")]
    NonFiniteReward(f64),
    #[error("no actions available")]
    EmptyActionSet,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("q-table schema violation: {0}")]
    SchemaViolation(String),
    #[error("q-table i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct QEntry {
    pub q: f64,
    pub n: u64,
}

/// Action values keyed by `(state, action)`. Absent entries read as 0.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    alpha: f64,
    gamma: f64,
    entries: BTreeMap<(State, Action), QEntry>,
}

fn check_hyperparameters(alpha: f64, gamma: f64) -> Result<(), QError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(QError::InvalidHyperparameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(QError::InvalidHyperparameter(format!(
            "gamma must lie in [0, 1), got {gamma}"
        )));
    }
    Ok(())
}

impl QTable {
    pub fn new(alpha: f64, gamma: f64) -> Result<Self, QError> {
        check_hyperparameters(alpha, gamma)?;
        Ok(Self {
            alpha,
            gamma,
            entries: BTreeMap::new(),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn get(&self, s: &State, a: &Action) -> f64 {
        self.entries
            .get(&(s.clone(), a.clone()))
            .map_or(0.0, |e| e.q)
    }

    pub fn update_count(&self, s: &State, a: &Action) -> u64 {
        self.entries
            .get(&(s.clone(), a.clone()))
            .map_or(0, |e| e.n)
    }

    /// Sets a value directly without touching the update counter.
    pub fn set(&mut self, s: State, a: Action, q: f64) {
        self.entries.entry((s, a)).or_default().q = q;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&State, &Action, QEntry)> {
        self.entries.iter().map(|((s, a), e)| (s, a, *e))
    }

    /// States that have at least one stored entry.
    pub fn states(&self) -> Vec<&State> {
        let mut out: Vec<&State> = self.entries.keys().map(|(s, _)| s).collect();
        out.dedup();
        out
    }

    /// Actions with a stored entry for `s`.
    pub fn actions_of(&self, s: &State) -> Vec<Action> {
        self.entries
            .keys()
            .filter(|(state, _)| state == s)
            .map(|(_, a)| a.clone())
            .collect()
    }

    /// `max_a Q(s, a)` over `available`; 0 for an empty set.
    pub fn max_value(&self, s: &State, available: &[Action]) -> f64 {
        available
            .iter()
            .map(|a| self.get(s, a))
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |m| m.max(v))))
            .unwrap_or(0.0)
    }

    /// One temporal-difference step on `(s, a)`:
    /// `Q <- (1 - alpha) Q + alpha (r + gamma max_a' Q(s', a'))`.
    ///
    /// `next` is the successor state and its available actions, or `None`
    /// when `a` ended the episode (the absorbing state has value 0).
    /// Returns the new value.
    pub fn td_update(
        &mut self,
        s: &State,
        a: &Action,
        reward: f64,
        next: Option<(&State, &[Action])>,
    ) -> Result<f64, QError> {
        if !reward.is_finite() {
            return Err(QError::NonFiniteReward(reward));
        }
        let future = next.map_or(0.0, |(s_next, actions)| self.max_value(s_next, actions));
        let target = reward + self.gamma * future;
        let entry = self.entries.entry((s.clone(), a.clone())).or_default();
        entry.q = (1.0 - self.alpha) * entry.q + self.alpha * target;
        entry.n += 1;
        Ok(entry.q)
    }
}

fn dedup(available: &[Action]) -> Vec<Action> {
    let mut out: Vec<Action> = Vec::with_capacity(available.len());
    for a in available {
        if !out.contains(a) {
            out.push(a.clone());
        }
    }
    out
}

fn ranked(q: &QTable, s: &State, available: &[Action]) -> Vec<Action> {
    let mut actions = dedup(available);
    actions.sort_by(|x, y| {
        q.get(s, y)
            .total_cmp(&q.get(s, x))
            .then_with(|| x.name().cmp(y.name()))
    });
    actions
}

/// The highest-valued action, ties broken by ascending action name.
pub fn greedy_policy(q: &QTable, s: &State, available: &[Action]) -> Result<Action, QError> {
    ranked(q, s, available)
        .into_iter()
        .next()
        .ok_or(QError::EmptyActionSet)
}

/// The `k` highest-valued actions, by descending value then ascending name.
pub fn top_k(q: &QTable, s: &State, available: &[Action], k: usize) -> Result<Vec<Action>, QError> {
    if k == 0 {
        return Err(QError::InvalidK);
    }
    if available.is_empty() {
        return Err(QError::EmptyActionSet);
    }
    let mut actions = ranked(q, s, available);
    actions.truncate(k);
    Ok(actions)
}

/// Builds the successor set offered to an agent.
///
/// During cold start every available action is offered. Otherwise the top-k
/// actions are offered and, with probability `epsilon`, one further action
/// drawn uniformly from the remainder.
pub fn decision_space<R: Rng + ?Sized>(
    q: &QTable,
    s: &State,
    available: &[Action],
    k: usize,
    epsilon: f64,
    cold_start: bool,
    rng: &mut R,
) -> Result<DecisionSpace, QError> {
    if available.is_empty() {
        return Err(QError::EmptyActionSet);
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(QError::InvalidHyperparameter(format!(
            "epsilon must lie in [0, 1], got {epsilon}"
        )));
    }
    if cold_start {
        return Ok(DecisionSpace {
            entries: dedup(available)
                .into_iter()
                .map(|a| (a, Provenance::ColdStart))
                .collect(),
        });
    }
    let best = top_k(q, s, available, k)?;
    let rest: Vec<Action> = dedup(available)
        .into_iter()
        .filter(|a| !best.contains(a))
        .collect();
    let mut entries: Vec<(Action, Provenance)> =
        best.into_iter().map(|a| (a, Provenance::TopK)).collect();
    if epsilon > 0.0 && rng.random::<f64>() < epsilon && !rest.is_empty() {
        let pick = rest[rng.random_range(0..rest.len())].clone();
        entries.push((pick, Provenance::Exploration));
    }
    Ok(DecisionSpace { entries })
}

/// `max(floor, epsilon * decay)`.
pub fn decay_epsilon(epsilon: f64, decay: f64, floor: f64) -> f64 {
    floor.max(epsilon * decay)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryRecord {
    state: State,
    action: Action,
    q: f64,
    n: u64,
}

/// On-disk form of a Q-table, optionally carrying the episode counter and
/// role statistics so a learner can resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QTableDocument {
    version: u32,
    alpha: f64,
    gamma: f64,
    #[serde(default)]
    episodes: u64,
    entries: Vec<EntryRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    role_stats: Option<RoleStats>,
}

impl QTableDocument {
    pub fn new(q: &QTable, episodes: u64, role_stats: Option<RoleStats>) -> Self {
        Self {
            version: QTABLE_SCHEMA_VERSION,
            alpha: q.alpha,
            gamma: q.gamma,
            episodes,
            entries: q
                .iter()
                .map(|(s, a, e)| EntryRecord {
                    state: s.clone(),
                    action: a.clone(),
                    q: e.q,
                    n: e.n,
                })
                .collect(),
            role_stats,
        }
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn role_stats(&self) -> Option<&RoleStats> {
        self.role_stats.as_ref()
    }

    pub fn to_qtable(&self) -> Result<QTable, QError> {
        if self.version != QTABLE_SCHEMA_VERSION {
            return Err(QError::SchemaViolation(format!(
                "unsupported version {}",
                self.version
            )));
        }
        let mut q = QTable::new(self.alpha, self.gamma)
            .map_err(|e| QError::SchemaViolation(e.to_string()))?;
        for rec in &self.entries {
            if !rec.q.is_finite() {
                return Err(QError::SchemaViolation(format!(
                    "non-finite value for ({}, {})",
                    rec.state, rec.action
                )));
            }
            let key = (rec.state.clone(), rec.action.clone());
            if q.entries.insert(key, QEntry { q: rec.q, n: rec.n }).is_some() {
                return Err(QError::SchemaViolation(format!(
                    "duplicate entry ({}, {})",
                    rec.state, rec.action
                )));
            }
        }
        Ok(q)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("q-table serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, QError> {
        serde_json::from_str(s).map_err(|e| QError::SchemaViolation(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), QError> {
        fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, QError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

pub fn save_qtable(q: &QTable, path: &Path) -> Result<(), QError> {
    QTableDocument::new(q, 0, None).save(path)
}

pub fn load_qtable(path: &Path) -> Result<QTable, QError> {
    QTableDocument::load(path)?.to_qtable()
}

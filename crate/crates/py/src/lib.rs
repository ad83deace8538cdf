//! Python bindings: the Q-table, reward and protocol helpers, scenario
//! training and the value-iteration oracle.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use qflow::bench::{self, FiniteMdp, ScenarioSpec, Transition};
use qflow::reward::{component_reward as component, RewardConfig};
use qflow::{agents, validate_role_set, Action, QTableDocument, RoleSet, RoleSpec, State, TokenUsage};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn state(s: &str) -> State {
    State::from(s.to_string())
}

fn action(a: &str) -> Action {
    if a == qflow::END {
        Action::End
    } else {
        Action::goto(a)
    }
}

fn actions(names: &[String]) -> Vec<Action> {
    names.iter().map(|n| action(n)).collect()
}

fn names(v: Vec<Action>) -> Vec<String> {
    v.into_iter().map(|a| a.name().to_string()).collect()
}

fn lenient_roles(roles: &[String]) -> PyResult<RoleSet> {
    validate_role_set(roles.iter().map(|r| RoleSpec::new(r.as_str()).terminating()).collect()).map_err(err)
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "QTable", module = "pyqflow")]
struct PyQTable {
    inner: qflow::QTable,
}

#[pymethods]
impl PyQTable {
    #[new]
    #[pyo3(signature = (alpha = 0.1, gamma = 0.9))]
    fn new(alpha: f64, gamma: f64) -> PyResult<Self> {
        Ok(Self {
            inner: qflow::QTable::new(alpha, gamma).map_err(err)?,
        })
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    fn get(&self, state_name: &str, action_name: &str) -> f64 {
        self.inner.get(&state(state_name), &action(action_name))
    }

    fn set(&mut self, state_name: &str, action_name: &str, value: f64) {
        self.inner.set(state(state_name), action(action_name), value);
    }

    fn update_count(&self, state_name: &str, action_name: &str) -> u64 {
        self.inner.update_count(&state(state_name), &action(action_name))
    }

    /// One temporal-difference update. Omit `next_state` for a terminal step.
    #[pyo3(signature = (state_name, action_name, reward, next_state = None, available = Vec::new()))]
    fn td_update(
        &mut self,
        state_name: &str,
        action_name: &str,
        reward: f64,
        next_state: Option<&str>,
        available: Vec<String>,
    ) -> PyResult<f64> {
        let next = next_state.map(state);
        let avail = actions(&available);
        let succ = next.as_ref().map(|n| (n, avail.as_slice()));
        self.inner
            .td_update(&state(state_name), &action(action_name), reward, succ)
            .map_err(err)
    }

    fn greedy(&self, state_name: &str, available: Vec<String>) -> PyResult<String> {
        qflow::greedy_policy(&self.inner, &state(state_name), &actions(&available))
            .map(|a| a.name().to_string())
            .map_err(err)
    }

    fn top_k(&self, state_name: &str, available: Vec<String>, k: usize) -> PyResult<Vec<String>> {
        qflow::top_k(&self.inner, &state(state_name), &actions(&available), k)
            .map(names)
            .map_err(err)
    }

    fn states(&self) -> Vec<String> {
        self.inner.states().into_iter().map(|s| s.name().to_string()).collect()
    }

    fn to_json(&self) -> String {
        QTableDocument::new(&self.inner, 0, None).to_json()
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let doc = QTableDocument::from_json(text).map_err(err)?;
        Ok(Self {
            inner: doc.to_qtable().map_err(err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "QTable(alpha={}, gamma={}, entries={})",
            self.inner.alpha(),
            self.inner.gamma(),
            self.inner.len()
        )
    }
}

#[pyfunction]
fn component_reward(default: f64, scale: f64) -> f64 {
    component(default, scale)
}

#[pyfunction]
#[pyo3(signature = (path_len, lambda_p = 0.0, min_path_len = 0))]
fn terminal_reward(path_len: usize, lambda_p: f64, min_path_len: u32) -> f64 {
    let cfg = RewardConfig {
        lambda_p,
        min_path_len,
        ..RewardConfig::default()
    };
    qflow::terminal_reward(path_len, &cfg)
}

#[pyfunction]
fn decay_epsilon(epsilon: f64, decay: f64, floor: f64) -> f64 {
    qflow::decay_epsilon(epsilon, decay, floor)
}

#[pyfunction]
fn cost(prompt_tokens: u64, completion_tokens: u64, price_prompt: f64, price_completion: f64) -> f64 {
    agents::cost(TokenUsage::new(prompt_tokens, completion_tokens), price_prompt, price_completion)
}

/// The role named by the last next-node marker in `content`, or "END".
#[pyfunction]
fn parse_next_node(content: &str, roles: Vec<String>) -> PyResult<String> {
    let set = lenient_roles(&roles)?;
    agents::parse_next_node(content, &set)
        .map(|a| a.name().to_string())
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (template, prev_nodes, next_avail_nodes, query = ""))]
fn render_prompt(template: &str, prev_nodes: Vec<String>, next_avail_nodes: Vec<String>, query: &str) -> PyResult<String> {
    agents::render_prompt(template, &prev_nodes, &next_avail_nodes, query, &[])
        .map(|r| r.system_prompt)
        .map_err(err)
}

#[pyfunction]
fn builtin_scenarios() -> Vec<&'static str> {
    bench::BUILTIN_SCENARIOS.to_vec()
}

/// Trains on a scenario (a built-in name or a TOML path) and returns the
/// run report as a dict.
#[pyfunction]
#[pyo3(signature = (scenario, episodes = None, seed = None))]
fn run_scenario<'py>(
    py: Python<'py>,
    scenario: &str,
    episodes: Option<u64>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut spec = ScenarioSpec::load(std::path::Path::new(scenario)).map_err(err)?;
    if let Some(n) = episodes {
        spec.episodes = n;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    let report = py
        .detach(|| bench::run_scenario(&spec, &spec.engine))
        .map_err(err)?;
    json_to_py(py, &report.to_json())
}

/// Exact action values of a deterministic process given as
/// `(state, action, reward, next_state or None)` tuples.
#[pyfunction]
fn value_iteration<'py>(
    py: Python<'py>,
    transitions: Vec<(String, String, f64, Option<String>)>,
    gamma: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let mdp = FiniteMdp {
        gamma,
        transitions: transitions
            .into_iter()
            .map(|(state, action, reward, next)| Transition {
                state,
                action,
                reward,
                next,
            })
            .collect(),
    };
    let sol = bench::value_iteration_oracle(&mdp).map_err(err)?;
    let out = PyDict::new(py);
    for ((s, a), v) in sol.q {
        out.set_item((s, a), v)?;
    }
    Ok(out)
}

#[pymodule]
fn pyqflow(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyQTable>()?;
    m.add_function(wrap_pyfunction!(component_reward, m)?)?;
    m.add_function(wrap_pyfunction!(terminal_reward, m)?)?;
    m.add_function(wrap_pyfunction!(decay_epsilon, m)?)?;
    m.add_function(wrap_pyfunction!(cost, m)?)?;
    m.add_function(wrap_pyfunction!(parse_next_node, m)?)?;
    m.add_function(wrap_pyfunction!(render_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(builtin_scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(value_iteration, m)?)?;
    m.add("END", qflow::END)?;
    m.add("START", qflow::START)?;
    Ok(())
}

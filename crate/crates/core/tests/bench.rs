use std::collections::BTreeMap;

use qflow::agents::ScriptedBackend;
use qflow::bench::{
    builtin, export_sankey, role_mdp, run_scenario, train, value_iteration_oracle, BenchError, FiniteMdp, Flow,
    ScenarioSpec, Transition, AGENT_ERROR_SINK, PRUNED_SINK, STEP_LIMIT_SINK,
};
use qflow::{validate_role_set, Action, Engine, EngineConfig, RoleSpec, State, END};

fn two_step_traces(n: usize) -> Vec<qflow::EpisodeTrace> {
    let roles = validate_role_set(vec![RoleSpec::new("A"), RoleSpec::new("B").terminating()]).unwrap();
    let mut engine = Engine::new(roles, EngineConfig::default(), 0).unwrap();
    (0..n)
        .map(|_| {
            let backend = ScriptedBackend::routes([Action::goto("A"), Action::goto("B"), Action::End]);
            engine.run_episode("q", &backend).unwrap()
        })
        .collect()
}

fn flow(column: usize, source: &str, target: &str, count: u64) -> Flow {
    Flow {
        column,
        source: source.into(),
        target: target.into(),
        count,
    }
}

#[test]
fn sankey_counts_identical_traces() {
    let flows = export_sankey(&two_step_traces(2)).unwrap();
    assert_eq!(flows.flows, vec![flow(0, "A", "B", 2), flow(1, "B", END, 2)]);
    let mut out = Vec::new();
    flows.to_csv(&mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), "column,source,target,count\n0,A,B,2\n1,B,END,2\n");
}

#[test]
fn sankey_rejects_empty_input() {
    assert!(matches!(export_sankey(&[]), Err(BenchError::EmptyInput)));
}

#[test]
fn sankey_conserves_flow_over_traitor_run() {
    let spec = builtin("traitor").unwrap();
    let t = train(&spec, &spec.engine).unwrap();
    assert_eq!(t.traces.len(), 161);
    let flows = export_sankey(&t.traces).unwrap();
    assert_eq!(flows.column_total(0), 161);

    let terminal = |n: &str| [END, PRUNED_SINK, STEP_LIMIT_SINK, AGENT_ERROR_SINK].contains(&n);
    let finished: u64 = flows.flows.iter().filter(|f| terminal(&f.target)).map(|f| f.count).sum();
    assert_eq!(finished, 161);

    let mut inflow: BTreeMap<(usize, &str), u64> = BTreeMap::new();
    let mut outflow: BTreeMap<(usize, &str), u64> = BTreeMap::new();
    for f in &flows.flows {
        if !terminal(&f.target) {
            *inflow.entry((f.column + 1, f.target.as_str())).or_default() += f.count;
        }
        *outflow.entry((f.column, f.source.as_str())).or_default() += f.count;
    }
    for c in 1..flows.columns() {
        let ins: BTreeMap<_, _> = inflow.iter().filter(|((col, _), _)| *col == c).collect();
        let outs: BTreeMap<_, _> = outflow.iter().filter(|((col, _), _)| *col == c).collect();
        assert_eq!(ins, outs, "column {c}");
    }
}

#[test]
fn oracle_examples() {
    let t = |s: &str, a: &str, r: f64, next: Option<&str>| Transition {
        state: s.into(),
        action: a.into(),
        reward: r,
        next: next.map(str::to_string),
    };
    let one = FiniteMdp {
        gamma: 0.9,
        transitions: vec![t("s", END, 100.0, None)],
    };
    assert_eq!(value_iteration_oracle(&one).unwrap().value("s", END), Some(100.0));

    let chain = FiniteMdp {
        gamma: 0.9,
        transitions: vec![t("s0", "go", -10.0, Some("s1")), t("s1", END, 100.0, None)],
    };
    let v = value_iteration_oracle(&chain).unwrap().value("s0", "go").unwrap();
    assert!((v - (-10.0 + 0.9 * 100.0)).abs() < 1e-12);

    let undiscounted = FiniteMdp { gamma: 1.0, ..chain };
    assert!(matches!(value_iteration_oracle(&undiscounted), Err(BenchError::InvalidMdp(_))));
}

#[test]
fn role_mdp_needs_stationary_rewards() {
    let spec = builtin("mixed").unwrap();
    let roles = spec.validate().unwrap();
    assert!(matches!(
        role_mdp(&roles, &spec.engine.reward, 0.9),
        Err(BenchError::NonStationary(_))
    ));
    let chain = builtin("chain").unwrap();
    let mdp = role_mdp(&chain.validate().unwrap(), &chain.engine.reward, 0.9).unwrap();
    assert!(!mdp.transitions.iter().any(|t| t.state == qflow::START && t.action == END));
}

#[test]
fn reports_are_deterministic() {
    let spec = builtin("mixed").unwrap();
    let a = run_scenario(&spec, &spec.engine).unwrap();
    let b = run_scenario(&spec, &spec.engine).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.episodes.len(), 200);
    assert!(a.pass_rate_defined && a.pass_rate > 0.5);

    let usage = a.episodes.iter().map(|e| e.usage.total()).sum::<u64>();
    assert_eq!(a.total_usage.total(), usage);

    let mut csv = Vec::new();
    a.episodes_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 201);
    let mut csv = Vec::new();
    a.roles_csv(&mut csv).unwrap();
    let rows: usize = a.roles.iter().map(|r| r.q_from.len().max(1)).sum();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1 + rows);
}

#[test]
fn zero_episode_report_flags_pass_rate() {
    let mut spec = builtin("traitor").unwrap();
    spec.episodes = 0;
    let r = run_scenario(&spec, &spec.engine).unwrap();
    assert!(r.episodes.is_empty());
    assert_eq!(r.pass_rate, 0.0);
    assert!(!r.pass_rate_defined);
}

#[test]
fn scenario_files_load() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/traitor.toml");
    let from_file = ScenarioSpec::load(&path).unwrap();
    assert_eq!(from_file, builtin("traitor").unwrap());
    assert_eq!(ScenarioSpec::load(std::path::Path::new("mixed")).unwrap().name, "mixed");
    assert!(ScenarioSpec::from_toml_str("name = \"x\"\nbogus = 1").is_err());
}

/// The traitor sign property holds for most seeds, not all: a state can
/// offer the traitor too late for its value to be learned.
#[test]
fn traitor_sign_property_across_seeds() {
    let path = [
        ("Algorithm Designer", "Programming Expert"),
        ("Programming Expert", "Code Auditor"),
        ("Code Auditor", "Test Engineer"),
    ];
    let traitor = Action::goto("Researcher");
    let mut holds = 0;
    for seed in 0..50 {
        let mut spec = builtin("traitor").unwrap();
        spec.seed = seed;
        let t = train(&spec, &spec.engine).unwrap();
        let q = t.engine.qtable();
        let traitor_ok = t
            .traces
            .iter()
            .flat_map(|tr| tr.edges.iter().zip(&tr.decision_spaces))
            .filter(|(_, space)| space.contains(&traitor))
            .all(|(e, _)| q.get(&e.from, &traitor) < 0.0);
        let path_ok = q.get(&State::Start, &Action::goto("Algorithm Designer")) > 0.0
            && path.iter().all(|(s, a)| q.get(&State::role(*s), &Action::goto(*a)) > 0.0);
        holds += (traitor_ok && path_ok) as usize;
    }
    assert!(holds >= 40, "sign property held for {holds}/50 seeds");
}

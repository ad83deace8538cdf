use std::sync::atomic::{AtomicUsize, Ordering};

use qflow::agents::{format_marker, Completion, FnBackend, ScriptedBackend};
use qflow::bench::{builtin, ScenarioBackend, SCENARIO_SYSTEM_PROMPT};
use qflow::{
    available_actions, validate_role_set, Action, Engine, EngineConfig, Outcome, Provenance, RoleSet, RoleSpec, State,
    TokenUsage,
};

fn two_roles() -> RoleSet {
    validate_role_set(vec![RoleSpec::new("A"), RoleSpec::new("B").terminating()]).unwrap()
}

fn snapshot(engine: &Engine) -> String {
    engine.to_document().to_json()
}

#[test]
fn straight_line_matches_closed_form() {
    let mut engine = Engine::new(two_roles(), EngineConfig::default(), 1).unwrap();
    let backend = ScriptedBackend::routes([Action::goto("A"), Action::goto("B"), Action::End]);
    let trace = engine.run_episode("q", &backend).unwrap();
    let n = trace.executed_roles.len() as f64;
    assert_eq!(trace.outcome, Outcome::Success);
    assert_eq!(trace.cumulative_reward, n * -10.0 + 100.0);
    assert_eq!(trace.cumulative_reward, 80.0);
    assert!((trace.edge_reward_sum() - trace.cumulative_reward).abs() < 1e-9);
    assert_eq!(trace.transcript.len(), 3);
    assert_eq!(trace.transcript[0].role, None);
    assert_eq!(trace.transcript[2].role.as_deref(), Some("B"));
}

#[test]
fn forced_loop_is_pruned_without_learning() {
    let mut engine = Engine::new(two_roles(), EngineConfig::default(), 1).unwrap();
    let warmup = ScriptedBackend::routes([Action::goto("A"), Action::goto("B"), Action::End]);
    engine.run_episode("warm", &warmup).unwrap();
    let before = snapshot(&engine);
    let looping = FnBackend(|_: &qflow::AgentRequest| {
        Ok(Completion {
            content: format_marker(&Action::goto("A")),
            usage: TokenUsage::default(),
        })
    });
    let trace = engine.run_episode("spin", &looping).unwrap();
    assert_eq!(trace.outcome, Outcome::Pruned);
    assert!(trace.cumulative_reward < engine.config().prune_threshold);
    assert_eq!(snapshot(&engine)[..], before.replace("\"episodes\": 1", "\"episodes\": 2")[..]);
    assert_eq!(engine.episodes(), 2);
}

#[test]
fn step_limit_episodes_update() {
    let cfg = EngineConfig {
        max_steps: 4,
        prune_threshold: -1e6,
        ..EngineConfig::default()
    };
    let mut engine = Engine::new(two_roles(), cfg, 1).unwrap();
    let backend = ScriptedBackend::repeating(
        [Action::goto("A"), Action::goto("B")]
            .into_iter()
            .map(|a| qflow::agents::ScriptStep::new("", a, TokenUsage::default()))
            .collect(),
    );
    let trace = engine.run_episode("q", &backend).unwrap();
    assert_eq!(trace.outcome, Outcome::StepLimit);
    assert_eq!(trace.edges.len(), 4);
    assert!(!engine.qtable().is_empty());
    assert_eq!(engine.stats().counts("A").unwrap().n_execute, 2);
    assert_eq!(engine.stats().counts("A").unwrap().n_success, 0);
}

#[test]
fn agent_gets_one_retry_with_notice() {
    let calls = AtomicUsize::new(0);
    let backend = FnBackend(|req: &qflow::AgentRequest| {
        calls.fetch_add(1, Ordering::SeqCst);
        let next = match (req.step, &req.notice) {
            (0, None) => "Nobody".to_string(),
            (0, Some(_)) => "A".to_string(),
            (1, _) => "B".to_string(),
            _ => "END".to_string(),
        };
        Ok(Completion {
            content: format!("/* next_node: {next} */"),
            usage: TokenUsage::new(10, 5),
        })
    });
    let mut engine = Engine::new(two_roles(), EngineConfig::default(), 1).unwrap();
    let trace = engine.run_episode("q", &backend).unwrap();
    assert_eq!(trace.outcome, Outcome::Success);
    assert_eq!(calls.load(Ordering::SeqCst), 4);
    assert_eq!(trace.usage, TokenUsage::new(40, 20));
}

#[test]
fn prompt_lists_offered_nodes() {
    let seen = std::sync::Mutex::new(Vec::new());
    let backend = FnBackend(|req: &qflow::AgentRequest| {
        seen.lock().unwrap().push((req.prev_nodes.clone(), req.next_avail_nodes.clone(), req.system_prompt.clone()));
        let next = match req.step {
            0 => "A",
            1 => "B",
            _ => "END",
        };
        Ok(Completion {
            content: format!("/* next_node: {next} */"),
            usage: TokenUsage::default(),
        })
    });
    let mut engine = Engine::new(two_roles(), EngineConfig::default(), 1)
        .unwrap()
        .with_prompts(SCENARIO_SYSTEM_PROMPT.into(), String::new());
    engine.run_episode("q", &backend).unwrap();
    let seen = seen.into_inner().unwrap();
    assert_eq!(seen[0].1, ["A", "B"]);
    assert_eq!(seen[0].2, "Already executed nodes: \nAvailable next nodes: A, B");
    assert_eq!(seen[2].0, ["A"]);
    assert_eq!(seen[2].1, ["A", "B", "END"]);
}

#[test]
fn scenario_runs_are_reproducible_and_connected() {
    let spec = builtin("mixed").unwrap();
    let run = |seed: u64| {
        let roles = spec.validate().unwrap();
        let mut engine = Engine::new(roles, spec.engine, seed)
            .unwrap()
            .with_prompts(SCENARIO_SYSTEM_PROMPT.into(), String::new());
        let backend = ScenarioBackend::new(&spec, seed);
        (0..60)
            .map(|i| engine.run_episode(&spec.task_for(i).unwrap().id, &backend).unwrap().to_json())
            .collect::<Vec<_>>()
    };
    let a = run(9);
    assert_eq!(a, run(9));
    assert_ne!(a, run(10));

    for json in &a {
        let trace = qflow::EpisodeTrace::from_json(json).unwrap();
        assert_eq!(trace.edges[0].from, State::Start);
        for pair in trace.edges.windows(2) {
            assert_eq!(pair[0].to.successor().as_ref(), Some(&pair[1].from));
            assert!(pair[0].step < pair[1].step);
        }
        assert!((trace.edge_reward_sum() - trace.cumulative_reward).abs() < 1e-9);
        assert_eq!(trace.outcome == Outcome::Success, trace.edges.last().unwrap().to.is_end());
    }
}

#[test]
fn cold_start_offers_everything() {
    let spec = builtin("mixed").unwrap();
    let roles = spec.validate().unwrap();
    let mut engine = Engine::new(roles.clone(), spec.engine, 4).unwrap();
    let backend = ScenarioBackend::new(&spec, 4);
    for i in 0..spec.engine.cold_start_episodes {
        let trace = engine.run_episode(&spec.task_for(i).unwrap().id, &backend).unwrap();
        let mut executed = Vec::new();
        for (edge, space) in trace.edges.iter().zip(&trace.decision_spaces) {
            let available = available_actions(&edge.from, &roles, &executed);
            assert_eq!(space.actions().cloned().collect::<Vec<_>>(), available);
            assert!(space.entries.iter().all(|(_, p)| *p == Provenance::ColdStart));
            if let Action::Goto(r) = &edge.to {
                executed.push(r.clone());
            }
        }
    }
}

#[test]
fn resume_restores_learning_state() {
    let spec = builtin("mixed").unwrap();
    let roles = spec.validate().unwrap();
    let mut engine = Engine::new(roles.clone(), spec.engine, 4).unwrap();
    let backend = ScenarioBackend::new(&spec, 4);
    for i in 0..40 {
        engine.run_episode(&spec.task_for(i).unwrap().id, &backend).unwrap();
    }
    let doc = engine.to_document();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.json");
    doc.save(&path).unwrap();
    let loaded = qflow::QTableDocument::load(&path).unwrap();
    let resumed = Engine::new(roles, spec.engine, 99).unwrap().resume(&loaded).unwrap();
    assert_eq!(resumed.episodes(), 40);
    assert_eq!(resumed.epsilon(), engine.epsilon());
    assert_eq!(resumed.qtable(), engine.qtable());
    assert_eq!(resumed.stats(), engine.stats());
    assert!(!resumed.in_cold_start());
}

#[test]
fn resume_rejects_other_hyperparameters() {
    let engine = Engine::new(two_roles(), EngineConfig::default(), 0).unwrap();
    let doc = engine.to_document();
    let cfg = EngineConfig {
        alpha: 0.5,
        ..EngineConfig::default()
    };
    let other = Engine::new(two_roles(), cfg, 0).unwrap();
    assert!(other.resume(&doc).is_err());
}

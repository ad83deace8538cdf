use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use qflow::agents::cost;
use qflow::bench::{export_sankey, train_from, ScenarioSpec, SCENARIO_SYSTEM_PROMPT};
use qflow::{top_k, Config, Engine, EpisodeTrace, HttpBackend, Outcome, QTableDocument, State};

#[derive(Parser)]
#[command(name = "qflow", version, about = "Learn and run multi-agent workflows with tabular Q-learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Answer one query against a live chat-completions endpoint.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        query: String,
        /// Learner state to resume from and save back to.
        #[arg(long)]
        qtable: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a learner on a simulated scenario.
    Train {
        /// Scenario file, or the name of a built-in scenario.
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        episodes: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for the report, CSVs and traces.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Where to write the learned table; defaults to <out>/qtable.json.
        #[arg(long)]
        qtable: Option<PathBuf>,
        /// Continue from a previously saved table.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Print the top-k actions of each state in a saved table.
    Inspect {
        #[arg(long)]
        qtable: PathBuf,
        #[arg(long)]
        state: Option<String>,
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
    /// Turn a JSON-lines trace file into Sankey flow CSV.
    Export {
        #[arg(long)]
        traces: PathBuf,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config file or a scenario.
    Validate {
        #[arg(long, required_unless_present = "scenario")]
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "config")]
        scenario: Option<PathBuf>,
    },
}

/// A command that ran to completion but whose result is a failure.
struct Flagged(String);

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run {
            config,
            query,
            qtable,
            seed,
        } => run(&config, &query, qtable.as_deref(), seed),
        Command::Train {
            scenario,
            episodes,
            seed,
            out,
            qtable,
            resume,
        } => train(&scenario, episodes, seed, &out, qtable.as_deref(), resume.as_deref()),
        Command::Inspect { qtable, state, k } => inspect(&qtable, state.as_deref(), k).map(|()| None),
        Command::Export { traces, out } => export(&traces, out.as_deref()).map(|()| None),
        Command::Validate { config, scenario } => validate(config.as_deref(), scenario.as_deref()).map(|()| None),
    };
    match result {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(Flagged(msg))) => {
            eprintln!("qflow: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("qflow: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(config: &Path, query: &str, qtable: Option<&Path>, seed: u64) -> Result<Option<Flagged>> {
    let cfg = Config::load(config)?;
    let mut engine = Engine::from_config(&cfg, seed)?;
    if let Some(path) = qtable.filter(|p| p.exists()) {
        engine = engine.resume(&QTableDocument::load(path)?)?;
    }
    let backend = HttpBackend::from_env(cfg.backend.clone())?;
    let trace = engine.run_episode(query, &backend)?;

    let mut stdout = io::stdout().lock();
    for m in &trace.transcript {
        writeln!(stdout, "--- {}", m.role.as_deref().unwrap_or("dispatcher"))?;
        writeln!(stdout, "{}", m.content)?;
    }
    writeln!(stdout, "---")?;
    writeln!(
        stdout,
        "outcome {}  path {}  reward {:.2}",
        trace.outcome,
        trace.executed_roles.join(" -> "),
        trace.cumulative_reward
    )?;
    let dollars = cost(trace.usage, cfg.backend.price_prompt, cfg.backend.price_completion);
    writeln!(
        stdout,
        "tokens {} prompt / {} completion  cost {dollars:.6}",
        trace.usage.prompt_tokens, trace.usage.completion_tokens
    )?;

    if let Some(path) = qtable {
        engine.to_document().save(path)?;
    }
    Ok((trace.outcome != Outcome::Success).then(|| Flagged(format!("episode ended as {}", trace.outcome))))
}

fn train(
    scenario: &Path,
    episodes: Option<u64>,
    seed: Option<u64>,
    out: &Path,
    qtable: Option<&Path>,
    resume: Option<&Path>,
) -> Result<Option<Flagged>> {
    let mut spec = ScenarioSpec::load(scenario)?;
    if let Some(n) = episodes {
        spec.episodes = n;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    let roles = spec.validate()?;
    let mut engine =
        Engine::new(roles, spec.engine, spec.seed)?.with_prompts(SCENARIO_SYSTEM_PROMPT.to_string(), String::new());
    if let Some(path) = resume {
        engine = engine.resume(&QTableDocument::load(path)?)?;
    }
    let trained = train_from(&spec, engine)?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let q_path = qtable.map_or_else(|| out.join("qtable.json"), Path::to_path_buf);
    trained.engine.to_document().save(&q_path)?;
    fs::write(out.join("report.json"), trained.report.to_json())?;
    trained.report.episodes_csv(File::create(out.join("episodes.csv"))?)?;
    trained.report.roles_csv(File::create(out.join("roles.csv"))?)?;
    let mut traces = BufWriter::new(File::create(out.join("traces.jsonl"))?);
    for t in &trained.traces {
        writeln!(traces, "{}", t.to_json())?;
    }
    traces.flush()?;

    let r = &trained.report;
    println!(
        "{}: {} episodes, seed {}, pass rate {:.3}, cost {:.6}",
        r.scenario,
        r.episodes.len(),
        r.seed,
        r.pass_rate,
        r.total_cost
    );
    for (difficulty, len) in &r.mean_length {
        println!("  mean length ({difficulty}): {len:.2}");
    }
    println!("wrote {} and reports to {}", q_path.display(), out.display());

    let all_pruned = !r.episodes.is_empty() && r.episodes.iter().all(|e| e.outcome == Outcome::Pruned);
    Ok(all_pruned.then(|| Flagged("every episode was pruned".into())))
}

fn inspect(path: &Path, state: Option<&str>, k: usize) -> Result<()> {
    if k == 0 {
        bail!("--k must be positive");
    }
    let q = QTableDocument::load(path)?.to_qtable()?;
    let states: Vec<State> = match state {
        Some(s) => {
            let s = State::from(s.to_string());
            if !q.states().contains(&&s) {
                bail!("state `{s}` has no entries in {}", path.display());
            }
            vec![s]
        }
        None => q.states().into_iter().cloned().collect(),
    };
    let mut stdout = io::stdout().lock();
    for s in &states {
        let actions = q.actions_of(s);
        for a in top_k(&q, s, &actions, k)? {
            writeln!(stdout, "{s}\t{a}\t{:.6}", q.get(s, &a))?;
        }
    }
    Ok(())
}

fn export(traces: &Path, out: Option<&Path>) -> Result<()> {
    let file = File::open(traces).with_context(|| format!("opening {}", traces.display()))?;
    let mut parsed = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t = EpisodeTrace::from_json(&line).with_context(|| format!("{}:{}", traces.display(), n + 1))?;
        parsed.push(t);
    }
    let flows = export_sankey(&parsed)?;
    match out {
        Some(p) => flows.to_csv(File::create(p)?)?,
        None => flows.to_csv(io::stdout().lock())?,
    }
    Ok(())
}

fn validate(config: Option<&Path>, scenario: Option<&Path>) -> Result<()> {
    let roles = if let Some(p) = config {
        let cfg = Config::load(p)?;
        cfg.engine.validate(&cfg.roles)?;
        cfg.roles
    } else if let Some(p) = scenario {
        ScenarioSpec::load(p)?.validate()?
    } else {
        bail!("nothing to validate");
    };
    println!("ok: {} roles", roles.len());
    for r in roles.iter() {
        let end = if r.may_terminate { "  may end" } else { "" };
        println!("  {}  cost {}{end}", r.name, r.cost);
    }
    Ok(())
}

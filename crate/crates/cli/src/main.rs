use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use drivelm_cockpit::{AppState, ServiceConfig};
use drivelm_core::agent::{Backend, RecordingBackend, RemoteConfig};
use drivelm_core::dsl::{check_source, parse_program, pretty_print, GateLimits};
use drivelm_core::evaluator::{evaluate, InfractionCoefficients, ScoreWeights};
use drivelm_core::executor::ProgramDriver;
use drivelm_core::harness::{
    feedback_loop_run, render_report, run_suite, run_suite_with, simulate, AgentSpec, BackendSpec, ReportStyle,
    RunConfig, ScriptedRubric, SuiteReport, DEFAULT_REGENERATIONS,
};
use drivelm_core::memory::MemoryStore;
use drivelm_core::scenario::{
    category_counts, generate_scenario, generate_suite, parse_suite, suite_to_string, Category, Scenario,
};
use drivelm_core::session::SessionConfig;
use drivelm_core::sim::sensor_snapshot;
use drivelm_core::traffic::BaselineKind;

#[derive(Parser)]
#[command(name = "rig", version, about = "Closed-loop benchmark rig for instruction-following driving agents")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a scenario suite (YAML, one document per scenario).
    GenSuite {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        total: usize,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an agent over a suite and write the report.
    Run(RunArgs),
    /// Run the feedback loop with the scripted rubric, remembering accepted programs.
    Loop {
        #[command(flatten)]
        run: RunArgs,
        /// Memory directory; in-memory when absent.
        #[arg(long)]
        memory: Option<PathBuf>,
        /// Driver whose memory is read and written.
        #[arg(long, default_value = "default")]
        user: String,
        /// Regenerations allowed per scenario after negative feedback.
        #[arg(long, default_value_t = DEFAULT_REGENERATIONS)]
        budget: usize,
    },
    /// Render a saved report, optionally against a baseline report.
    Report {
        report: PathBuf,
        /// Baseline as NAME=PATH.
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long, value_enum, default_value_t = Style::Table)]
        style: Style,
    },
    /// Driving program tools.
    Lmp {
        #[command(subcommand)]
        cmd: LmpCmd,
    },
    /// Per-user memory tools.
    Memory {
        #[command(subcommand)]
        cmd: MemoryCmd,
    },
    /// Serve interactive sessions over HTTP and WebSocket.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[command(flatten)]
        backend: BackendArgs,
        /// Memory directory; in-memory when absent.
        #[arg(long)]
        memory: Option<PathBuf>,
        /// Wall-clock milliseconds per tick; sessions step only on request when absent.
        #[arg(long)]
        pace_ms: Option<u64>,
        /// Simulated seconds between a response and its effect.
        #[arg(long)]
        response_delay: Option<f64>,
    },
}

#[derive(Subcommand)]
enum LmpCmd {
    /// Parse and gate a program against a scenario's opening situation.
    Check {
        file: PathBuf,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Drive a scenario with a program and print the score card.
    Run {
        file: PathBuf,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Print a program in canonical layout.
    Fmt { file: PathBuf },
}

#[derive(Subcommand)]
enum MemoryCmd {
    /// Write a user's records as JSON lines.
    Export {
        #[arg(long)]
        dir: PathBuf,
        /// Driver whose records are exported.
        #[arg(long)]
        user: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Append records from a JSON lines export.
    Import {
        #[arg(long)]
        dir: PathBuf,
        /// Driver whose records are imported.
        #[arg(long)]
        user: String,
        file: PathBuf,
    },
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = parse_category, default_value = "speed")]
    category: Category,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Agent {
    Idm,
    Mobil,
    Dsl,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Scripted,
    Replay,
    Remote,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Style {
    Table,
    Lines,
}

#[derive(Args, Clone)]
struct BackendArgs {
    #[arg(long, value_enum, default_value_t = BackendKind::Scripted)]
    backend: BackendKind,
    /// Scripted rules YAML; the bundled reference rules when absent.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Replay transcript (JSON lines).
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// Append every completion to this transcript for later replay.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Chat-completions endpoint of the remote backend.
    #[arg(long)]
    url: Option<String>,
    /// Model name sent to the remote backend.
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    key_env: Option<String>,
    /// Request timeout in seconds.
    #[arg(long)]
    timeout: Option<f64>,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Suite file from gen-suite; generated from --seed and --total when absent.
    #[arg(long)]
    suite: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    total: usize,
    #[arg(long, value_enum, default_value_t = Agent::Dsl)]
    agent: Agent,
    #[command(flatten)]
    backend: BackendArgs,
    /// Few-shot exemplars in each prompt.
    #[arg(long, default_value_t = 3)]
    shots: usize,
    /// Score weights (YAML or JSON).
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Full run configuration (YAML or JSON); agent flags are ignored when given.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    parallelism: usize,
    /// Directory for report.json and report.txt.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Style::Table)]
    style: Style,
    /// Exit nonzero when any scenario ends in a collision.
    #[arg(long)]
    strict: bool,
}

fn parse_category(s: &str) -> Result<Category, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|_| {
        let names: Vec<String> = Category::ALL.iter().map(|c| c.to_string()).collect();
        format!("unknown category '{s}'; expected one of {}", names.join(", "))
    })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// YAML is a superset of JSON, so one parser serves both.
fn read_data<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_yaml::from_str(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

impl BackendArgs {
    fn spec(&self) -> Result<BackendSpec> {
        Ok(match self.backend {
            BackendKind::Scripted => BackendSpec::Scripted { rules: self.rules.clone() },
            BackendKind::Replay => {
                let Some(t) = &self.transcript else { bail!("--backend replay needs --transcript") };
                BackendSpec::Replay { transcript: t.clone() }
            }
            BackendKind::Remote => {
                let mut cfg = RemoteConfig::default();
                if let Some(u) = &self.url {
                    cfg.url = u.clone();
                }
                if let Some(m) = &self.model {
                    cfg.model = m.clone();
                }
                if let Some(k) = &self.key_env {
                    cfg.key_env = Some(k.clone());
                }
                if let Some(t) = self.timeout {
                    cfg.timeout_secs = t;
                }
                BackendSpec::Remote(cfg)
            }
        })
    }

    fn build(&self) -> Result<Arc<dyn Backend>> {
        let inner = self.spec()?.build()?;
        Ok(match &self.record {
            Some(path) => Arc::new(RecordingBackend::new(inner, path)?),
            None => inner,
        })
    }
}

impl RunArgs {
    fn suite(&self) -> Result<Vec<Scenario>> {
        match &self.suite {
            Some(p) => Ok(parse_suite(&read(p)?).with_context(|| format!("parsing {}", p.display()))?),
            None => Ok(generate_suite(self.seed, self.total)?),
        }
    }

    fn config(&self) -> Result<RunConfig> {
        if let Some(p) = &self.config {
            return read_data(p);
        }
        let agent = match self.agent {
            Agent::Idm => AgentSpec::Baseline { model: BaselineKind::Idm },
            Agent::Mobil => AgentSpec::Baseline { model: BaselineKind::Mobil },
            Agent::Dsl => AgentSpec::Dsl { backend: self.backend.spec()?, shots: self.shots },
        };
        let mut cfg = RunConfig::new(agent);
        if let Some(w) = &self.weights {
            cfg.weights = read_data::<ScoreWeights>(w)?;
        }
        cfg.parallelism = self.parallelism;
        cfg.seed = self.seed;
        Ok(cfg)
    }

    fn style(&self) -> ReportStyle {
        style(self.style)
    }
}

fn style(s: Style) -> ReportStyle {
    match s {
        Style::Table => ReportStyle::Table,
        Style::Lines => ReportStyle::Lines,
    }
}

fn write_report(report: &SuiteReport, out: Option<&Path>, style: ReportStyle) -> Result<()> {
    let text = render_report(report, style, None);
    print!("{text}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        std::fs::write(dir.join("report.json"), report.to_json())?;
        std::fs::write(dir.join("report.txt"), text)?;
        eprintln!("wrote {}", dir.join("report.json").display());
    }
    Ok(())
}

fn strict_check(report: &SuiteReport, strict: bool) -> Result<()> {
    let crashed: Vec<&str> = report
        .rows
        .iter()
        .filter(|r| r.card.as_ref().is_some_and(|c| c.collided))
        .map(|r| r.scenario_id.as_str())
        .collect();
    if strict && !crashed.is_empty() {
        bail!("{} scenario(s) ended in a collision: {}", crashed.len(), crashed.join(", "));
    }
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let suite = args.suite()?;
    let cfg = args.config()?;
    let report = match (&cfg.agent, &args.backend.record) {
        (AgentSpec::Dsl { shots, .. }, Some(_)) if args.config.is_none() => {
            run_suite_with(&cfg, &suite, &args.backend.build()?, *shots)?
        }
        _ => run_suite(&cfg, &suite)?,
    };
    write_report(&report, args.out.as_deref(), args.style())?;
    strict_check(&report, args.strict)
}

fn open_memory(dir: Option<&Path>) -> Result<MemoryStore> {
    Ok(match dir {
        Some(d) => MemoryStore::open(d)?,
        None => MemoryStore::in_memory(),
    })
}

fn cmd_loop(args: &RunArgs, memory: Option<&Path>, user: &str, budget: usize) -> Result<()> {
    let suite = args.suite()?;
    let cfg = args.config()?;
    let AgentSpec::Dsl { shots, .. } = &cfg.agent else { bail!("the feedback loop needs --agent dsl") };
    let backend = args.backend.build()?;
    let mut store = open_memory(memory)?;
    let (report, log) = feedback_loop_run(&cfg, &suite, &backend, *shots, &ScriptedRubric, &mut store, user, budget)?;
    write_report(&report, args.out.as_deref(), args.style())?;
    if let Some(dir) = &args.out {
        let lines: Vec<String> = log.iter().map(|l| serde_json::to_string(l).expect("log serializes")).collect();
        std::fs::write(dir.join("iterations.jsonl"), lines.join("\n") + "\n")?;
    }
    let regenerated = report.rows.iter().filter(|r| r.regenerations > 0).count();
    println!("regenerated {regenerated} of {} scenarios", report.rows.len());
    strict_check(&report, args.strict)
}

fn cmd_report(path: &Path, baseline: Option<&str>, s: Style) -> Result<()> {
    let report: SuiteReport = serde_json::from_str(&read(path)?).context("parsing report")?;
    let base = match baseline {
        Some(spec) => {
            let (name, p) = spec.split_once('=').context("--baseline expects NAME=PATH")?;
            let b: SuiteReport = serde_json::from_str(&read(Path::new(p))?).context("parsing baseline")?;
            Some((name.to_string(), b))
        }
        None => None,
    };
    print!("{}", render_report(&report, style(s), base.as_ref().map(|(n, b)| (n.as_str(), b))));
    Ok(())
}

fn scenario(args: &ScenarioArgs) -> Result<Scenario> {
    Ok(generate_scenario(args.seed, 0, args.category)?)
}

fn cmd_lmp(cmd: &LmpCmd) -> Result<()> {
    match cmd {
        LmpCmd::Fmt { file } => {
            let program = parse_program(&read(file)?).map_err(|e| anyhow::anyhow!("{e}"))?;
            print!("{}", pretty_print(&program));
        }
        LmpCmd::Check { file, scenario: sa } => {
            let sc = scenario(sa)?;
            let snap = sensor_snapshot(&sc.initial, sc.ego)?;
            let (_, verdict) = check_source(&read(file)?, &snap, &GateLimits::default());
            println!("{}", serde_json::to_string_pretty(&verdict)?);
            if !verdict.accepted {
                bail!("rejected: {}", verdict.reason.unwrap_or_default());
            }
        }
        LmpCmd::Run { file, scenario: sa } => {
            let sc = scenario(sa)?;
            let snap = sensor_snapshot(&sc.initial, sc.ego)?;
            let (program, verdict) = check_source(&read(file)?, &snap, &GateLimits::default());
            let Some(program) = program.filter(|_| verdict.accepted) else {
                bail!("rejected: {}", verdict.reason.unwrap_or_default());
            };
            let mut driver = ProgramDriver::new(Arc::new(program));
            let trace = simulate(&sc, &mut driver, Vec::new())?;
            let card = evaluate(&sc, &trace, &ScoreWeights::default(), &InfractionCoefficients::default(), 0.0)?;
            println!("scenario {}: {}", sc.id, sc.instruction);
            println!("{}", serde_json::to_string_pretty(&card)?);
        }
    }
    Ok(())
}

fn cmd_memory(cmd: &MemoryCmd) -> Result<()> {
    match cmd {
        MemoryCmd::Export { dir, user, out } => {
            let store = MemoryStore::open(dir)?;
            let text = store.export(user);
            match out {
                Some(p) => std::fs::write(p, text)?,
                None => print!("{text}"),
            }
        }
        MemoryCmd::Import { dir, user, file } => {
            let mut store = MemoryStore::open(dir)?;
            let n = store.import(user, &read(file)?)?;
            println!("imported {n} records for {user}");
        }
    }
    Ok(())
}

fn cmd_serve(
    addr: SocketAddr,
    backend: &BackendArgs,
    memory: Option<&Path>,
    pace_ms: Option<u64>,
    response_delay: Option<f64>,
) -> Result<()> {
    let config = ServiceConfig {
        session: SessionConfig { response_delay, ..SessionConfig::default() },
        pacing: pace_ms.map(Duration::from_millis),
    };
    let state = AppState::new(backend.build()?, open_memory(memory)?, config);
    let rt = tokio::runtime::Runtime::new()?;
    eprintln!("listening on http://{addr}");
    rt.block_on(drivelm_cockpit::serve(state, addr))?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::GenSuite { seed, total, out } => {
            let suite = generate_suite(seed, total)?;
            let counts = category_counts(total)?;
            let text = suite_to_string(&suite)?;
            match out {
                Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
            let parts: Vec<String> = Category::ALL.iter().zip(counts).map(|(c, n)| format!("{c} {n}")).collect();
            eprintln!("{} scenarios: {}", suite.len(), parts.join(", "));
        }
        Cmd::Run(args) => cmd_run(&args)?,
        Cmd::Loop { run, memory, user, budget } => cmd_loop(&run, memory.as_deref(), &user, budget)?,
        Cmd::Report { report, baseline, style } => cmd_report(&report, baseline.as_deref(), style)?,
        Cmd::Lmp { cmd } => cmd_lmp(&cmd)?,
        Cmd::Memory { cmd } => cmd_memory(&cmd)?,
        Cmd::Serve { addr, backend, memory, pace_ms, response_delay } => {
            cmd_serve(addr, &backend, memory.as_deref(), pace_ms, response_delay)?
        }
    }
    Ok(())
}

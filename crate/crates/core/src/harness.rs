//! Benchmark orchestration: closed-loop runs of an agent over a suite,
//! aggregation into reports, the feedback loop and report rendering.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use thiserror::Error;

use crate::agent::{
    build_prompt, exchange, AgentExchange, Backend, PolicyOutput, PromptTemplates, RemoteBackend, RemoteConfig,
    ReplayBackend, ScriptedBackend,
};
use crate::control::{apply_action_matrix, ParameterTable};
use crate::dsl::{check_source, GateLimits, GateVerdict};
use crate::evaluator::{evaluate, InfractionCoefficients, ScoreCard, ScoreWeights};
use crate::executor::ProgramDriver;
use crate::memory::{MemoryStore, NewRecord, DEFAULT_K};
use crate::scenario::{frame_world, Category, GoalKind, GoalTracker, Scenario};
use crate::sim::{describe_scene, sensor_snapshot, Control, Controls, RunTrace, SimError, TraceEvent, VehicleId, WorldState};
use crate::traffic::{BaselineAgent, BaselineKind, MobilParams, RuleDriver};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Agent(#[from] crate::agent::AgentError),
    #[error(transparent)]
    Memory(#[from] crate::memory::MemoryError),
    #[error(transparent)]
    Scenario(#[from] crate::scenario::ScenarioError),
}

/// Where completions come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    /// Rules file; `None` uses the bundled reference rules.
    Scripted { rules: Option<PathBuf> },
    Replay { transcript: PathBuf },
    Remote(RemoteConfig),
}

impl BackendSpec {
    pub fn build(&self) -> Result<Arc<dyn Backend>, HarnessError> {
        Ok(match self {
            BackendSpec::Scripted { rules: None } => Arc::new(ScriptedBackend::oracle()),
            BackendSpec::Scripted { rules: Some(path) } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
                Arc::new(ScriptedBackend::from_yaml(format!("scripted:{}", path.display()), &text)?)
            }
            BackendSpec::Replay { transcript } => Arc::new(ReplayBackend::open(transcript)?),
            BackendSpec::Remote(cfg) => Arc::new(RemoteBackend::new(cfg.clone())?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentSpec {
    /// Instruction-blind rule-based driver.
    Baseline { model: BaselineKind },
    /// Language-model agent writing driving programs.
    Dsl { backend: BackendSpec, shots: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub agent: AgentSpec,
    #[serde(default)]
    pub weights: ScoreWeights,
    #[serde(default)]
    pub coefficients: InfractionCoefficients,
    #[serde(default)]
    pub limits: GateLimits,
    /// Worker threads; 0 uses all cores.
    #[serde(default)]
    pub parallelism: usize,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn new(agent: AgentSpec) -> Self {
        RunConfig {
            agent,
            weights: ScoreWeights::default(),
            coefficients: InfractionCoefficients::default(),
            limits: GateLimits::default(),
            parallelism: 0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.weights.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.coefficients.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if let AgentSpec::Dsl { shots, .. } = &self.agent {
            if *shots != 0 && *shots != 3 {
                return Err(HarnessError::Config(format!("shots must be 0 or 3, got {shots}")));
            }
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

/// Anything that drives the ego one tick at a time.
pub trait EgoController {
    fn control(&mut self, world: &WorldState, ego: VehicleId) -> Result<Control, SimError>;
    fn take_events(&mut self) -> Vec<TraceEvent> {
        Vec::new()
    }
}

impl EgoController for BaselineAgent {
    fn control(&mut self, world: &WorldState, ego: VehicleId) -> Result<Control, SimError> {
        BaselineAgent::control(self, world, ego)
    }
}

impl EgoController for ProgramDriver {
    fn control(&mut self, world: &WorldState, ego: VehicleId) -> Result<Control, SimError> {
        ProgramDriver::control(self, world, ego)
    }

    fn take_events(&mut self) -> Vec<TraceEvent> {
        ProgramDriver::take_events(self)
    }
}

/// Background traffic of a scenario.
#[derive(Debug, Clone)]
pub struct Traffic {
    drivers: Vec<(VehicleId, RuleDriver)>,
}

impl Traffic {
    pub fn new(scenario: &Scenario) -> Self {
        let drivers = scenario
            .background
            .iter()
            .map(|b| (b.id, RuleDriver::new(b.idm, b.lane_changes.then(MobilParams::default))))
            .collect();
        Traffic { drivers }
    }

    pub fn controls(&mut self, world: &WorldState, into: &mut Controls) -> Result<(), SimError> {
        for (id, d) in &mut self.drivers {
            into.insert(*id, d.control(world, *id)?);
        }
        Ok(())
    }
}

/// Steps the world once with `ego` and the background traffic, returning
/// the events of the tick.
pub fn step_once(
    scenario: &Scenario,
    world: &mut WorldState,
    traffic: &mut Traffic,
    ego: &mut dyn EgoController,
) -> Result<Vec<TraceEvent>, SimError> {
    let mut controls = Controls::new();
    controls.insert(scenario.ego, ego.control(world, scenario.ego)?);
    traffic.controls(world, &mut controls)?;
    let mut events = ego.take_events();
    events.extend(world.step(&controls)?.into_iter().map(TraceEvent::Collision));
    Ok(events)
}

/// Closed-loop run until the goal is held, the ego collides or time runs out.
pub fn simulate(scenario: &Scenario, ego: &mut dyn EgoController, initial_events: Vec<TraceEvent>) -> Result<RunTrace, SimError> {
    let mut world = scenario.initial.clone();
    let mut traffic = Traffic::new(scenario);
    let mut trace = RunTrace::new(scenario.id.clone(), &world, scenario.ego);
    trace.record(&world, initial_events);
    let mut tracker = GoalTracker::new();
    tracker.observe(scenario, &world);
    let dt = world.dynamics.dt;
    let ticks = (scenario.time_limit / dt).round() as u64;
    while world.tick < ticks {
        let events = step_once(scenario, &mut world, &mut traffic, ego)?;
        let crashed = events.iter().any(|e| matches!(e, TraceEvent::Collision(c) if c.involves(scenario.ego)));
        trace.record(&world, events);
        if tracker.observe(scenario, &world).is_some() || crashed {
            break;
        }
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    /// The program or response was rejected; the car kept its speed and lane.
    GateRejected,
    /// The backend could not be reached; excluded from aggregates.
    BackendFailed,
    /// The simulation itself failed.
    Fault,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub scenario_id: String,
    pub category: Category,
    pub status: RunStatus,
    pub card: Option<ScoreCard>,
    pub thought: Option<String>,
    pub verdict: Option<GateVerdict>,
    pub error: Option<String>,
    pub regenerations: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub scored: usize,
    pub backend_failed: usize,
    pub collision_pct: f64,
    pub completion_pct: f64,
    pub mean_ttc: f64,
    pub mean_sv: f64,
    pub mean_te: f64,
    pub mean_score: f64,
    pub mean_rc: f64,
    pub mean_ds: f64,
    pub mean_latency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub agent: String,
    pub config_hash: String,
    pub template_hash: String,
    pub rows: Vec<ScenarioRow>,
    pub aggregates: Aggregates,
    pub by_category: BTreeMap<Category, Aggregates>,
}

impl SuiteReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Aggregates over scored rows; backend failures are only counted.
pub fn aggregate<'a>(rows: impl IntoIterator<Item = &'a ScenarioRow>) -> Aggregates {
    let mut a = Aggregates::default();
    let mut cards = Vec::new();
    for r in rows {
        match (&r.status, &r.card) {
            (RunStatus::BackendFailed, _) => a.backend_failed += 1,
            (_, Some(c)) => cards.push(c),
            _ => {}
        }
    }
    a.scored = cards.len();
    if cards.is_empty() {
        return a;
    }
    let n = cards.len() as f64;
    let mean = |f: &dyn Fn(&ScoreCard) -> f64| cards.iter().map(|c| f(c)).sum::<f64>() / n;
    a.collision_pct = 100.0 * cards.iter().filter(|c| c.collided).count() as f64 / n;
    a.completion_pct = 100.0 * cards.iter().filter(|c| c.completed).count() as f64 / n;
    a.mean_ttc = mean(&|c| c.ttc);
    a.mean_sv = mean(&|c| c.sv);
    a.mean_te = mean(&|c| c.te);
    a.mean_score = mean(&|c| c.score);
    a.mean_rc = mean(&|c| c.rc);
    a.mean_ds = mean(&|c| c.ds);
    a.mean_latency = mean(&|c| c.latency);
    a
}

fn build_report(agent: String, config: &RunConfig, template_hash: String, mut rows: Vec<ScenarioRow>) -> SuiteReport {
    rows.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
    let mut by_category = BTreeMap::new();
    for c in Category::ALL {
        let agg = aggregate(rows.iter().filter(|r| r.category == c));
        if agg.scored + agg.backend_failed > 0 {
            by_category.insert(c, agg);
        }
    }
    SuiteReport {
        agent,
        config_hash: config.hash(),
        template_hash,
        aggregates: aggregate(&rows),
        by_category,
        rows,
    }
}

/// What one agent attempt on a scenario produced.
#[derive(Debug, Clone)]
pub struct Attempt {
    pub row: ScenarioRow,
    pub trace: Option<RunTrace>,
    pub exchange: Option<AgentExchange>,
}

fn scored(scenario: &Scenario, config: &RunConfig, status: RunStatus, trace: Result<RunTrace, SimError>, latency: f64) -> (ScenarioRow, Option<RunTrace>) {
    let mut row = ScenarioRow {
        scenario_id: scenario.id.clone(),
        category: scenario.category,
        status,
        card: None,
        thought: None,
        verdict: None,
        error: None,
        regenerations: 0,
    };
    match trace {
        Ok(trace) => match evaluate(scenario, &trace, &config.weights, &config.coefficients, latency) {
            Ok(card) => {
                row.card = Some(card);
                (row, Some(trace))
            }
            Err(e) => {
                row.status = RunStatus::Fault;
                row.error = Some(e.to_string());
                (row, Some(trace))
            }
        },
        Err(e) => {
            row.status = RunStatus::Fault;
            row.error = Some(e.to_string());
            (row, None)
        }
    }
}

pub fn run_baseline(scenario: &Scenario, kind: BaselineKind, config: &RunConfig) -> Attempt {
    let limit = scenario
        .initial
        .ego()
        .and_then(|e| scenario.initial.road.segment(e.segment).ok())
        .map_or(0.0, |s| s.speed_limit);
    let mut agent = BaselineAgent::new(kind, limit);
    let (row, trace) = scored(scenario, config, RunStatus::Ok, simulate(scenario, &mut agent, Vec::new()), 0.0);
    Attempt { row, trace, exchange: None }
}

/// One prompt, response, gate check and closed-loop run.
pub fn run_dsl_attempt(
    scenario: &Scenario,
    backend: &dyn Backend,
    templates: &PromptTemplates,
    config: &RunConfig,
    history: &[crate::agent::HistoryEntry],
    feedback: Option<&str>,
) -> Result<Attempt, HarnessError> {
    let snap = sensor_snapshot(&scenario.initial, scenario.ego)
        .map_err(|e| HarnessError::Config(format!("{}: {e}", scenario.id)))?;
    let bundle = build_prompt(templates, &snap, &scenario.instruction, history, Some(scenario.directness), feedback)?;
    let ex = exchange(backend, &bundle);
    let mut row_status = RunStatus::Ok;
    let mut verdict = None;
    let mut driver = ProgramDriver::idle();
    let mut events = vec![TraceEvent::Command { text: scenario.instruction.clone() }];

    let transport_failed = ex.output.is_none() && ex.raw.is_empty();
    if transport_failed {
        let row = ScenarioRow {
            scenario_id: scenario.id.clone(),
            category: scenario.category,
            status: RunStatus::BackendFailed,
            card: None,
            thought: None,
            verdict: None,
            error: ex.error.clone(),
            regenerations: 0,
        };
        return Ok(Attempt { row, trace: None, exchange: Some(ex) });
    }
    match &ex.output {
        Some(PolicyOutput::Program(src)) => {
            let (program, v) = check_source(src, &snap, &config.limits);
            match program {
                Some(p) if v.accepted => driver.load(Arc::new(p)),
                _ => {
                    row_status = RunStatus::GateRejected;
                    events.push(TraceEvent::GateRejected { reason: v.reason.clone().unwrap_or_default() });
                }
            }
            verdict = Some(v);
        }
        Some(PolicyOutput::Matrix(m)) => match apply_action_matrix(m, &ParameterTable::default()) {
            Ok((applied, _)) => driver.set_matrix(applied),
            Err(e) => {
                row_status = RunStatus::GateRejected;
                events.push(TraceEvent::GateRejected { reason: e.to_string() });
            }
        },
        None => {
            // unparseable response: rejected at the format stage
            let reason = ex.error.clone().unwrap_or_default();
            row_status = RunStatus::GateRejected;
            verdict = Some(GateVerdict::rejected_format(reason.clone()));
            events.push(TraceEvent::GateRejected { reason });
        }
    }
    let (mut row, trace) = scored(scenario, config, row_status, simulate(scenario, &mut driver, events), ex.latency);
    row.thought = ex.thought.clone();
    row.verdict = verdict;
    if row.error.is_none() {
        row.error = ex.error.clone();
    }
    Ok(Attempt { row, trace, exchange: Some(ex) })
}

fn pool(parallelism: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))
}

fn agent_name(spec: &AgentSpec, backend: Option<&dyn Backend>) -> String {
    match spec {
        AgentSpec::Baseline { model } => model.as_str().to_string(),
        AgentSpec::Dsl { shots, .. } => format!("dsl[{}, {shots}-shot]", backend.map_or(String::new(), |b| b.id())),
    }
}

/// Runs every scenario once. Rows are ordered by scenario id regardless of
/// the worker count.
pub fn run_suite(config: &RunConfig, suite: &[Scenario]) -> Result<SuiteReport, HarnessError> {
    config.validate()?;
    match &config.agent {
        AgentSpec::Baseline { model } => {
            let rows = pool(config.parallelism)?
                .install(|| suite.par_iter().map(|s| run_baseline(s, *model, config).row).collect());
            Ok(build_report(agent_name(&config.agent, None), config, String::new(), rows))
        }
        AgentSpec::Dsl { backend, shots } => {
            let backend = backend.build()?;
            run_suite_with(config, suite, backend.as_ref(), *shots)
        }
    }
}

/// `run_suite` for a DSL agent with an already constructed backend.
pub fn run_suite_with(
    config: &RunConfig,
    suite: &[Scenario],
    backend: &dyn Backend,
    shots: usize,
) -> Result<SuiteReport, HarnessError> {
    config.validate()?;
    let templates = PromptTemplates::builtin().with_shots(shots);
    let rows: Vec<ScenarioRow> = pool(config.parallelism)?.install(|| {
        suite
            .par_iter()
            .map(|s| run_dsl_attempt(s, backend, &templates, config, &[], None).map(|a| a.row))
            .collect::<Result<_, _>>()
    })?;
    Ok(build_report(agent_name(&config.agent, Some(backend)), config, templates.hash(), rows))
}

/// Driver reaction to a finished attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub positive: bool,
    pub text: String,
}

pub trait FeedbackSource {
    fn judge(&self, scenario: &Scenario, attempt: &Attempt) -> Feedback;
}

/// Offline stand-in for a human: compares the end of the run with the goal
/// and comments on the difference.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScriptedRubric;

fn kmh(v: f64) -> f64 {
    v * 3.6
}

impl FeedbackSource for ScriptedRubric {
    fn judge(&self, scenario: &Scenario, attempt: &Attempt) -> Feedback {
        let neg = |text: String| Feedback { positive: false, text };
        let Some(card) = &attempt.row.card else {
            return neg("Nothing happened after my command.".into());
        };
        if card.collided {
            return neg("You hit another vehicle. Please drive more carefully.".into());
        }
        if card.completed {
            return Feedback { positive: true, text: "Good, that is what I wanted.".into() };
        }
        let Some(trace) = &attempt.trace else {
            return neg("Nothing happened after my command.".into());
        };
        let Some(last) = trace.frames.last() else {
            return neg("Nothing happened after my command.".into());
        };
        let world = frame_world(&scenario.initial, last);
        let ego = world.vehicle(scenario.ego).ok();
        let text = match (&scenario.goal.kind, ego) {
            (GoalKind::Speed { min, max }, Some(e)) => {
                let want = kmh((min + max) / 2.0);
                if e.speed < *min {
                    format!("A little bit too slow. I wanted about {want:.0} km/h, you drove {:.0} km/h.", kmh(e.speed))
                } else {
                    format!("A little bit too fast. I wanted about {want:.0} km/h, you drove {:.0} km/h.", kmh(e.speed))
                }
            }
            (GoalKind::Distance { target_gap, .. }, Some(_)) => {
                let gap = sensor_snapshot(&world, scenario.ego).ok().and_then(|s| s.front_vehicle).map(|f| f.distance);
                match gap {
                    Some(g) if g < *target_gap => {
                        format!("Too close to the car ahead: {g:.0} m instead of {target_gap:.0} m.")
                    }
                    Some(g) => format!("Too far from the car ahead: {g:.0} m instead of {target_gap:.0} m."),
                    None => "You lost the car ahead.".to_string(),
                }
            }
            (GoalKind::PullOver { .. }, _) => "You did not stop on the right.".to_string(),
            (GoalKind::Routing { exit, .. }, _) => format!("You did not take the {exit} exit."),
            (GoalKind::LaneChange { target_lane, .. }, _) => {
                format!("You did not end up in lane {} from the left.", target_lane + 1)
            }
            (GoalKind::Overtake { .. }, _) => "You did not get past the slow car.".to_string(),
            (_, None) => "Nothing happened after my command.".to_string(),
        };
        neg(text)
    }
}

/// One attempt of the feedback loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub scenario_id: String,
    pub attempt: usize,
    pub prompt: String,
    /// (record id, similarity) of the retrieved history, best first.
    pub retrieved: Vec<(u64, f64)>,
    pub feedback: Feedback,
    pub committed: Option<u64>,
}

/// Default number of regenerations after negative feedback.
pub const DEFAULT_REGENERATIONS: usize = 2;

/// Runs the suite in order; each scenario may be regenerated after negative
/// feedback, and positively judged programs are committed to the user's memory.
#[allow(clippy::too_many_arguments)]
pub fn feedback_loop_run(
    config: &RunConfig,
    suite: &[Scenario],
    backend: &dyn Backend,
    shots: usize,
    source: &dyn FeedbackSource,
    memory: &mut MemoryStore,
    user: &str,
    budget: usize,
) -> Result<(SuiteReport, Vec<IterationLog>), HarnessError> {
    config.validate()?;
    let templates = PromptTemplates::builtin().with_shots(shots);
    let mut rows = Vec::new();
    let mut log = Vec::new();
    for scenario in suite {
        let retrieved: Vec<(u64, f64)> =
            memory.retrieve(user, &scenario.instruction, DEFAULT_K)?.into_iter().map(|(s, r)| (r.id, s)).collect();
        let history = memory.history(user, &scenario.instruction, DEFAULT_K)?;
        let mut feedback: Option<String> = None;
        let mut attempt_no = 0;
        loop {
            let attempt = run_dsl_attempt(scenario, backend, &templates, config, &history, feedback.as_deref())?;
            let verdict = source.judge(scenario, &attempt);
            let mut committed = None;
            if verdict.positive {
                if let Some(out) = attempt.exchange.as_ref().and_then(|e| e.output.as_ref()) {
                    let scene = sensor_snapshot(&scenario.initial, scenario.ego).ok().map(|s| describe_scene(&s));
                    committed = Some(memory.record(
                        user,
                        NewRecord {
                            instruction: scenario.instruction.clone(),
                            scene,
                            policy: out.text(),
                            feedback: Some(verdict.text.clone()),
                        },
                    )?);
                }
            }
            log.push(IterationLog {
                scenario_id: scenario.id.clone(),
                attempt: attempt_no,
                prompt: attempt.exchange.as_ref().map(|e| e.prompt.clone()).unwrap_or_default(),
                retrieved: retrieved.clone(),
                feedback: verdict.clone(),
                committed,
            });
            let done = verdict.positive || attempt_no >= budget || attempt.row.status == RunStatus::BackendFailed;
            if done {
                let mut row = attempt.row;
                row.regenerations = attempt_no;
                rows.push(row);
                break;
            }
            feedback = Some(verdict.text);
            attempt_no += 1;
        }
    }
    let name = format!("{} + feedback", agent_name(&config.agent, Some(backend)));
    Ok((build_report(name, config, templates.hash(), rows), log))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportStyle {
    Table,
    Lines,
}

const COLUMNS: [&str; 13] =
    ["scenario", "category", "status", "done", "crash", "ttc", "sv", "te", "score", "rc", "ip", "ds", "latency"];

fn opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.2}"))
}

fn row_cells(r: &ScenarioRow) -> Vec<String> {
    let c = r.card.as_ref();
    let status = match r.status {
        RunStatus::Ok => "ok",
        RunStatus::GateRejected => "rejected",
        RunStatus::BackendFailed => "backend_failed",
        RunStatus::Fault => "fault",
    };
    vec![
        r.scenario_id.clone(),
        r.category.to_string(),
        status.into(),
        c.map_or("-".into(), |c| if c.completed { "yes".into() } else { "no".into() }),
        c.map_or("-".into(), |c| if c.collided { "yes".into() } else { "no".into() }),
        opt(c.map(|c| c.ttc)),
        opt(c.map(|c| c.sv)),
        opt(c.map(|c| c.te)),
        opt(c.map(|c| c.score)),
        opt(c.map(|c| c.rc)),
        opt(c.map(|c| c.ip)),
        opt(c.map(|c| c.ds)),
        opt(c.map(|c| c.latency)),
    ]
}

fn summary_lines(name: &str, a: &Aggregates) -> Vec<String> {
    vec![
        format!(
            "{name}: scored {} | backend failed {} | collision {:.1}% | completion {:.1}%",
            a.scored, a.backend_failed, a.collision_pct, a.completion_pct
        ),
        format!(
            "{name}: ttc {:.2} | sv {:.2} | te {:.2} | score {:.2} (gated per run, then averaged) | rc {:.2} | ds {:.2} | latency {:.3}",
            a.mean_ttc, a.mean_sv, a.mean_te, a.mean_score, a.mean_rc, a.mean_ds, a.mean_latency
        ),
    ]
}

/// Renders a report. With a baseline, a signed score delta per scenario is
/// appended, matching rows by scenario id.
pub fn render_report(report: &SuiteReport, style: ReportStyle, baseline: Option<(&str, &SuiteReport)>) -> String {
    let base_scores: BTreeMap<&str, f64> = baseline
        .map(|(_, b)| {
            b.rows.iter().filter_map(|r| r.card.as_ref().map(|c| (r.scenario_id.as_str(), c.score))).collect()
        })
        .unwrap_or_default();
    let delta_header = baseline.map(|(name, _)| format!("d_score vs {name}"));
    let mut header: Vec<String> = COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(delta_header.clone());
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            let mut cells = row_cells(r);
            if baseline.is_some() {
                let d = match (r.card.as_ref(), base_scores.get(r.scenario_id.as_str())) {
                    (Some(c), Some(b)) => format!("{:+.2}", c.score - b),
                    _ => "-".into(),
                };
                cells.push(d);
            }
            cells
        })
        .collect();

    let mut out = String::new();
    match style {
        ReportStyle::Table => {
            let widths: Vec<usize> = (0..header.len())
                .map(|i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
                .collect();
            let line = |cells: &[String]| {
                let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
                format!("| {} |\n", padded.join(" | "))
            };
            out.push_str(&line(&header));
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(&format!("|-{}-|\n", rule.join("-|-")));
            for r in &rows {
                out.push_str(&line(r));
            }
        }
        ReportStyle::Lines => {
            for r in &rows {
                let pairs: Vec<String> = header.iter().zip(r).map(|(h, v)| format!("{}={v}", h.replace(' ', "_"))).collect();
                out.push_str(&pairs.join(" "));
                out.push('\n');
            }
        }
    }
    if !report.rows.is_empty() {
        out.push('\n');
        for l in summary_lines(&report.agent, &report.aggregates) {
            out.push_str(&l);
            out.push('\n');
        }
        for (c, a) in &report.by_category {
            out.push_str(&format!(
                "  {c}: n {} | collision {:.1}% | completion {:.1}% | score {:.2}\n",
                a.scored, a.collision_pct, a.completion_pct, a.mean_score
            ));
        }
        if let Some((name, b)) = baseline {
            out.push_str(&format!(
                "completion {:+.1} pts | collision {:+.1} pts | score {:+.2} vs {name}\n",
                report.aggregates.completion_pct - b.aggregates.completion_pct,
                report.aggregates.collision_pct - b.aggregates.collision_pct,
                report.aggregates.mean_score - b.aggregates.mean_score,
            ));
        }
    }
    out
}

//! Interactive drive: live stepping, mid-drive commands, takeover and
//! feedback capture.
//!
//! A session never calls a backend itself. `submit_command` returns the
//! request to send, and the caller hands the finished exchange back through
//! `deliver` between ticks. At most one request is in flight; a command
//! arriving meanwhile is queued with depth one, the newest winning.

use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

use crate::agent::{build_prompt, AgentExchange, PolicyOutput, PromptBundle, PromptTemplates};
use crate::control::{apply_action_matrix, ParameterTable};
use crate::dsl::{check_source, ActionIntent, GateLimits, GateVerdict};
use crate::evaluator::{
    evaluate, sv_score, takeover_rate, ttc_min, ttc_pairwise, ttc_score, InfractionCoefficients, ScoreCard, ScoreWeights,
};
use crate::executor::{IntentExecutor, ProgramDriver};
use crate::harness::{step_once, EgoController, Traffic};
use crate::memory::{MemoryStore, NewRecord, DEFAULT_K};
use crate::scenario::{GoalTracker, Scenario, OFF_ROUTE_DISTANCE};
use crate::sim::{describe_scene, sensor_snapshot, Control, RunTrace, SimError, TraceEvent, VehicleId, VehicleSample, WorldState};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Agent(#[from] crate::agent::AgentError),
    #[error(transparent)]
    Memory(#[from] crate::memory::MemoryError),
    #[error("invalid scenario: {0}")]
    Scenario(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub templates: PromptTemplates,
    pub limits: GateLimits,
    pub k: usize,
    /// Simulated seconds between a response arriving and it taking effect.
    pub response_delay: Option<f64>,
    pub weights: ScoreWeights,
    pub coefficients: InfractionCoefficients,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            templates: PromptTemplates::builtin(),
            limits: GateLimits::default(),
            k: DEFAULT_K,
            response_delay: None,
            weights: ScoreWeights::default(),
            coefficients: InfractionCoefficients::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Auto,
    TakenOver,
}

/// A prompt waiting for its completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingRequest {
    pub seq: u64,
    pub bundle: PromptBundle,
    pub sent_tick: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    Command { text: String },
    Queued { text: String },
    Superseded { text: String },
    Request { seq: u64, prompt_hash: String },
    Response { seq: u64, exchange: AgentExchange },
    Verdict { seq: u64, verdict: GateVerdict },
    Swap { seq: u64 },
    MatrixApplied { seq: u64, matrix: crate::control::ActionMatrix },
    Takeover,
    Release,
    ManualSpeed { speed: f64 },
    Feedback { text: String, record: u64 },
    Notice { text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub tick: u64,
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CommandAck {
    Dispatched { request: PendingRequest },
    Queued,
}

/// Running metrics streamed with every frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LiveScores {
    pub tau_min: Option<f64>,
    pub ttc: f64,
    pub mean_speed: f64,
    pub speed_std: f64,
    pub sv: f64,
    pub rc: f64,
    pub collisions: usize,
    pub takeovers: usize,
    pub completed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionFrame {
    pub session: String,
    pub tick: u64,
    pub time: f64,
    pub mode: Mode,
    pub pending: bool,
    pub queued: Option<String>,
    pub intent: Option<String>,
    pub thought: Option<String>,
    pub verdict: Option<GateVerdict>,
    pub ego: VehicleId,
    pub vehicles: Vec<VehicleSample>,
    pub scores: LiveScores,
    pub finished: bool,
    pub log_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session: String,
    pub user: String,
    pub scenario_id: String,
    pub weather: crate::sim::Weather,
    pub card: Option<ScoreCard>,
    pub takeovers: usize,
    pub takeover_rate: Option<f64>,
    pub commands: usize,
    pub exchanges: usize,
    pub mean_latency: Option<f64>,
}

#[derive(Debug, Clone)]
struct LastExchange {
    instruction: String,
    scene: String,
    policy: String,
    record: Option<u64>,
}

/// Holds lane and speed while the human has control.
#[derive(Debug, Clone)]
struct Manual {
    exec: IntentExecutor,
}

#[derive(Debug, Clone, Default)]
struct SpeedStats {
    n: usize,
    mean: f64,
    m2: f64,
}

impl SpeedStats {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn std(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.m2 / self.n as f64).sqrt()
        }
    }
}

pub struct Session {
    pub id: String,
    pub user: String,
    scenario: Scenario,
    config: SessionConfig,
    world: WorldState,
    traffic: Traffic,
    driver: ProgramDriver,
    manual: Option<Manual>,
    mode: Mode,
    trace: RunTrace,
    tracker: GoalTracker,
    pending: Option<PendingRequest>,
    arrived: Option<(f64, u64, AgentExchange)>,
    queued: Option<String>,
    next_seq: u64,
    log: Vec<SessionEvent>,
    last: Option<LastExchange>,
    thought: Option<String>,
    verdict: Option<GateVerdict>,
    takeovers: usize,
    speeds: SpeedStats,
    tau_min: Option<f64>,
    best_s: f64,
    collisions: usize,
    finished: bool,
}

struct ManualRef<'a>(&'a mut IntentExecutor, &'a crate::control::ActionMatrix);

impl EgoController for ManualRef<'_> {
    fn control(&mut self, world: &WorldState, ego: VehicleId) -> Result<Control, SimError> {
        self.0.step(world, ego, self.1)
    }
}

impl Session {
    /// Starts a drive. Until the first command the ego keeps its initial speed and lane.
    pub fn new(id: impl Into<String>, user: impl Into<String>, scenario: Scenario, config: SessionConfig) -> Result<Self, SessionError> {
        scenario.validate().map_err(|e| SessionError::Scenario(e.to_string()))?;
        let world = scenario.initial.clone();
        let mut trace = RunTrace::new(scenario.id.clone(), &world, scenario.ego);
        trace.record(&world, Vec::new());
        let mut s = Session {
            id: id.into(),
            user: user.into(),
            traffic: Traffic::new(&scenario),
            driver: ProgramDriver::idle(),
            manual: None,
            mode: Mode::Auto,
            trace,
            tracker: GoalTracker::new(),
            pending: None,
            arrived: None,
            queued: None,
            next_seq: 0,
            log: Vec::new(),
            last: None,
            thought: None,
            verdict: None,
            takeovers: 0,
            speeds: SpeedStats::default(),
            tau_min: None,
            best_s: 0.0,
            collisions: 0,
            finished: false,
            world,
            scenario,
            config,
        };
        s.observe();
        Ok(s)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn trace(&self) -> &RunTrace {
        &self.trace
    }

    pub fn log(&self) -> &[SessionEvent] {
        &self.log
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn takeovers(&self) -> usize {
        self.takeovers
    }

    pub fn pending(&self) -> Option<&PendingRequest> {
        self.pending.as_ref()
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn active_intent(&self) -> Option<ActionIntent> {
        self.driver.active_intent()
    }

    fn push(&mut self, kind: EventKind) {
        self.log.push(SessionEvent { tick: self.world.tick, time: self.world.time, kind });
    }

    fn observe(&mut self) {
        let ego = self.scenario.ego;
        let Ok(e) = self.world.vehicle(ego) else { return };
        let (p, v) = (e.position, e.velocity());
        if self.tracker.completion_time().is_some() {
            return;
        }
        self.speeds.push(e.speed);
        for o in self.world.vehicles.iter().filter(|o| o.id != ego) {
            if let Some(t) = ttc_pairwise(p, v, o.position, o.velocity()) {
                if t > 0.0 {
                    self.tau_min = Some(self.tau_min.map_or(t, |m| m.min(t)));
                }
            }
        }
        let proj = self.scenario.route.project(p);
        if proj.lateral.abs() <= OFF_ROUTE_DISTANCE {
            self.best_s = self.best_s.max(proj.s);
        }
        if let Some(t) = self.tracker.observe(&self.scenario, &self.world) {
            // running scores freeze at the completion time, as in the final card
            let mut stats = SpeedStats::default();
            for (_, e) in self.trace.ego_samples().filter(|(f, _)| f.time <= t + 1e-9) {
                stats.push(e.speed);
            }
            self.speeds = stats;
            self.tau_min = ttc_min(&self.trace, t);
        }
    }

    fn dispatch(&mut self, text: String, memory: &MemoryStore) -> Result<PendingRequest, SessionError> {
        let snap = sensor_snapshot(&self.world, self.scenario.ego)?;
        let history = memory.history(&self.user, &text, self.config.k)?;
        let bundle = build_prompt(&self.config.templates, &snap, &text, &history, None, None)?;
        let seq = self.next_seq;
        self.next_seq += 1;
        self.push(EventKind::Request { seq, prompt_hash: bundle.hash() });
        let req = PendingRequest { seq, bundle, sent_tick: self.world.tick };
        self.pending = Some(req.clone());
        Ok(req)
    }

    /// Accepts a command. Returns the request to send, or `Queued` when one is in flight.
    pub fn submit_command(&mut self, text: &str, memory: &MemoryStore) -> Result<CommandAck, SessionError> {
        self.push(EventKind::Command { text: text.to_string() });
        self.trace.annotate(TraceEvent::Command { text: text.to_string() });
        if self.pending.is_some() {
            if let Some(old) = self.queued.replace(text.to_string()) {
                self.push(EventKind::Superseded { text: old });
            }
            self.push(EventKind::Queued { text: text.to_string() });
            return Ok(CommandAck::Queued);
        }
        Ok(CommandAck::Dispatched { request: self.dispatch(text.to_string(), memory)? })
    }

    /// Hands back the completion of request `seq`. Returns the queued
    /// command's request when one was waiting.
    pub fn deliver(&mut self, seq: u64, exchange: AgentExchange, memory: &MemoryStore) -> Result<Option<PendingRequest>, SessionError> {
        if self.pending.as_ref().is_none_or(|p| p.seq != seq) {
            self.push(EventKind::Notice { text: format!("ignored response {seq}: not in flight") });
            return Ok(None);
        }
        self.pending = None;
        self.push(EventKind::Response { seq, exchange: exchange.clone() });
        match self.config.response_delay {
            Some(d) if d > 0.0 => self.arrived = Some((self.world.time + d, seq, exchange)),
            _ => self.apply(seq, exchange)?,
        }
        match self.queued.take() {
            Some(text) => Ok(Some(self.dispatch(text, memory)?)),
            None => Ok(None),
        }
    }

    fn apply(&mut self, seq: u64, ex: AgentExchange) -> Result<(), SessionError> {
        self.thought = ex.thought.clone();
        let snap = sensor_snapshot(&self.world, self.scenario.ego)?;
        let accepted_policy = match &ex.output {
            Some(PolicyOutput::Program(src)) => {
                let (program, verdict) = check_source(src, &snap, &self.config.limits);
                self.push(EventKind::Verdict { seq, verdict: verdict.clone() });
                self.verdict = Some(verdict.clone());
                match program {
                    Some(p) if verdict.accepted => {
                        self.driver.load(Arc::new(p));
                        self.push(EventKind::Swap { seq });
                        Some(src.clone())
                    }
                    _ => {
                        let reason = verdict.reason.unwrap_or_default();
                        self.trace.annotate(TraceEvent::GateRejected { reason });
                        None
                    }
                }
            }
            Some(PolicyOutput::Matrix(m)) => match apply_action_matrix(m, &ParameterTable::default()) {
                Ok((applied, _)) => {
                    self.driver.set_matrix(applied);
                    self.verdict = None;
                    self.push(EventKind::MatrixApplied { seq, matrix: applied });
                    Some(applied.render())
                }
                Err(e) => {
                    let verdict = GateVerdict::rejected_format(e.to_string());
                    self.push(EventKind::Verdict { seq, verdict: verdict.clone() });
                    self.verdict = Some(verdict);
                    None
                }
            },
            None => {
                let verdict = GateVerdict::rejected_format(ex.error.clone().unwrap_or_default());
                self.push(EventKind::Verdict { seq, verdict: verdict.clone() });
                self.verdict = Some(verdict);
                None
            }
        };
        if let Some(policy) = accepted_policy {
            self.last = Some(LastExchange {
                instruction: ex.instruction.clone(),
                scene: describe_scene(&snap),
                policy,
                record: None,
            });
        }
        Ok(())
    }

    pub fn takeover(&mut self) -> Result<(), SessionError> {
        if self.mode == Mode::TakenOver {
            return Ok(());
        }
        let v = self.world.vehicle(self.scenario.ego)?.speed;
        let exec = IntentExecutor::new(ActionIntent::Proceed { speed: v }, &self.world, self.scenario.ego)?;
        self.manual = Some(Manual { exec });
        self.mode = Mode::TakenOver;
        self.takeovers += 1;
        self.push(EventKind::Takeover);
        self.trace.annotate(TraceEvent::Takeover);
        Ok(())
    }

    pub fn release(&mut self) {
        if self.mode == Mode::Auto {
            return;
        }
        self.mode = Mode::Auto;
        self.manual = None;
        self.push(EventKind::Release);
        self.trace.annotate(TraceEvent::Release);
    }

    /// Target speed of the human driver while taken over.
    pub fn set_manual_speed(&mut self, speed: f64) -> Result<(), SessionError> {
        if self.mode != Mode::TakenOver || !speed.is_finite() || speed < 0.0 {
            self.push(EventKind::Notice { text: "manual speed ignored".into() });
            return Ok(());
        }
        let exec = IntentExecutor::new(ActionIntent::Proceed { speed }, &self.world, self.scenario.ego)?;
        self.manual = Some(Manual { exec });
        self.push(EventKind::ManualSpeed { speed });
        Ok(())
    }

    fn commit(&mut self, memory: &mut MemoryStore) -> Result<Option<u64>, SessionError> {
        let user = self.user.clone();
        let Some(last) = self.last.as_mut() else { return Ok(None) };
        if let Some(id) = last.record {
            return Ok(Some(id));
        }
        let id = memory.record(
            &user,
            NewRecord {
                instruction: last.instruction.clone(),
                scene: Some(last.scene.clone()),
                policy: last.policy.clone(),
                feedback: None,
            },
        )?;
        last.record = Some(id);
        Ok(Some(id))
    }

    /// Attaches feedback to the most recent accepted exchange.
    pub fn submit_feedback(&mut self, text: &str, memory: &mut MemoryStore) -> Result<Option<u64>, SessionError> {
        let Some(id) = self.commit(memory)? else {
            self.push(EventKind::Notice { text: "no exchange to give feedback on".into() });
            return Ok(None);
        };
        memory.update_feedback(&self.user, id, text)?;
        self.push(EventKind::Feedback { text: text.to_string(), record: id });
        Ok(Some(id))
    }

    /// Ends the trip; an accepted exchange without feedback is still remembered.
    pub fn finish_trip(&mut self, memory: &mut MemoryStore) -> Result<(), SessionError> {
        self.commit(memory)?;
        self.finished = true;
        Ok(())
    }

    /// Advances one step and returns the new frame.
    pub fn tick(&mut self) -> Result<SessionFrame, SessionError> {
        if self.finished {
            return Ok(self.frame());
        }
        if let Some((at, _, _)) = &self.arrived {
            if self.world.time >= *at - 1e-9 {
                let (_, seq, ex) = self.arrived.take().expect("checked");
                self.apply(seq, ex)?;
            }
        }
        let events = match (&self.mode, self.manual.as_mut()) {
            (Mode::TakenOver, Some(m)) => {
                let matrix = *self.driver.matrix();
                let mut ctrl = ManualRef(&mut m.exec, &matrix);
                step_once(&self.scenario, &mut self.world, &mut self.traffic, &mut ctrl)?
            }
            _ => step_once(&self.scenario, &mut self.world, &mut self.traffic, &mut self.driver)?,
        };
        let ego = self.scenario.ego;
        let crashed = events.iter().filter(|e| matches!(e, TraceEvent::Collision(c) if c.involves(ego))).count();
        self.collisions += crashed;
        self.trace.record(&self.world, events);
        self.observe();
        if crashed > 0 || self.world.time >= self.scenario.time_limit - 1e-9 {
            self.finished = true;
        }
        Ok(self.frame())
    }

    pub fn live_scores(&self) -> LiveScores {
        let std = self.speeds.std();
        LiveScores {
            tau_min: self.tau_min,
            ttc: ttc_score(self.tau_min),
            mean_speed: self.speeds.mean,
            speed_std: std,
            sv: sv_score(std, self.config.weights.sigma_safe),
            rc: (self.best_s / self.scenario.route.total_length()).clamp(0.0, 1.0) * 100.0,
            collisions: self.collisions,
            takeovers: self.takeovers,
            completed: self.tracker.completion_time().is_some() && self.collisions == 0,
        }
    }

    pub fn frame(&self) -> SessionFrame {
        SessionFrame {
            session: self.id.clone(),
            tick: self.world.tick,
            time: self.world.time,
            mode: self.mode,
            pending: self.pending.is_some(),
            queued: self.queued.clone(),
            intent: self.driver.active_intent().map(|i| i.to_string()),
            thought: self.thought.clone(),
            verdict: self.verdict.clone(),
            ego: self.scenario.ego,
            vehicles: self.world.vehicles.iter().map(VehicleSample::from).collect(),
            scores: self.live_scores(),
            finished: self.finished,
            log_len: self.log.len(),
        }
    }

    pub fn report(&self) -> SessionReport {
        let latencies: Vec<f64> = self
            .log
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::Response { exchange, .. } => Some(exchange.latency),
                _ => None,
            })
            .collect();
        let mean_latency = (!latencies.is_empty()).then(|| latencies.iter().sum::<f64>() / latencies.len() as f64);
        SessionReport {
            session: self.id.clone(),
            user: self.user.clone(),
            scenario_id: self.scenario.id.clone(),
            weather: self.world.conditions.weather,
            card: evaluate(&self.scenario, &self.trace, &self.config.weights, &self.config.coefficients, mean_latency.unwrap_or(0.0)).ok(),
            takeovers: self.takeovers,
            takeover_rate: takeover_rate(self.takeovers, 1),
            commands: self.log.iter().filter(|e| matches!(e.kind, EventKind::Command { .. })).count(),
            exchanges: latencies.len(),
            mean_latency,
        }
    }

    /// Rebuilds a session from its event log without contacting a backend:
    /// inputs are re-applied at their ticks and logged responses delivered.
    pub fn replay(
        id: impl Into<String>,
        user: impl Into<String>,
        scenario: Scenario,
        config: SessionConfig,
        log: &[SessionEvent],
        until_tick: u64,
    ) -> Result<Self, SessionError> {
        let mut s = Session::new(id, user, scenario, config)?;
        let memory = MemoryStore::in_memory();
        for ev in log {
            while s.world.tick < ev.tick && !s.finished {
                s.tick()?;
            }
            match &ev.kind {
                EventKind::Command { text } => {
                    s.submit_command(text, &memory)?;
                }
                EventKind::Response { seq, exchange } => {
                    s.deliver(*seq, exchange.clone(), &memory)?;
                }
                EventKind::Takeover => s.takeover()?,
                EventKind::Release => s.release(),
                EventKind::ManualSpeed { speed } => s.set_manual_speed(*speed)?,
                _ => {}
            }
        }
        while s.world.tick < until_tick && !s.finished {
            s.tick()?;
        }
        Ok(s)
    }
}

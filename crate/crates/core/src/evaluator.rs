//! Scoring of finished runs.
//!
//! Closed-loop runs get a task score from time-to-collision, speed variation
//! and time efficiency, gated by goal completion, plus a route-completion
//! driving score reduced by infractions. Interactive sessions additionally
//! use a baseline-relative comfort score, controller-parameter alignment and
//! takeover bookkeeping.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{ActionMatrix, DrivingStyle, ParameterTable};
use crate::scenario::{goal_satisfied, route_progress, Scenario};
use crate::sim::{RunTrace, TraceEvent, Vec2, VehicleId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("trace too short: need {need} ego samples, have {have}")]
    TraceTooShort { need: usize, have: usize },
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub w_ttc: f64,
    pub w_sv: f64,
    pub w_te: f64,
    /// Weights of the TTC, speed variance, acceleration and jerk sub-scores.
    pub comfort: [f64; 4],
    pub gamma: f64,
    /// Speed deviation at which the speed-variation score reaches zero (m/s).
    pub sigma_safe: f64,
    /// TTC at or above which the comfort score counts the run as safe (s).
    pub tau_c: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights {
            w_ttc: 0.4,
            w_sv: 0.3,
            w_te: 0.3,
            comfort: [0.3, 0.7 / 3.0, 0.7 / 3.0, 0.7 / 3.0],
            gamma: 20.0,
            sigma_safe: 5.0,
            tau_c: 1.5,
        }
    }
}

impl ScoreWeights {
    pub fn validate(&self) -> Result<(), EvalError> {
        let all = [self.w_ttc, self.w_sv, self.w_te].into_iter().chain(self.comfort);
        if all.clone().any(|w| !(0.0..=1.0).contains(&w)) {
            return Err(EvalError::Config("weights must lie in [0, 1]".into()));
        }
        if (self.w_ttc + self.w_sv + self.w_te - 1.0).abs() > 1e-9 {
            return Err(EvalError::Config("task score weights must sum to 1".into()));
        }
        if (self.comfort.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(EvalError::Config("comfort weights must sum to 1".into()));
        }
        if !(self.gamma > 0.0 && self.sigma_safe > 0.0 && self.tau_c > 0.0) {
            return Err(EvalError::Config("gamma, sigma_safe and tau_c must be positive".into()));
        }
        Ok(())
    }
}

/// Signed time to closest approach of two constant-velocity points.
/// `None` when the relative velocity vanishes.
pub fn ttc_pairwise(p0: Vec2, v0: Vec2, pi: Vec2, vi: Vec2) -> Option<f64> {
    let dv = v0 - vi;
    let n2 = dv.norm_sq();
    if n2 == 0.0 {
        return None;
    }
    Some(-(p0 - pi).dot(dv) / n2)
}

/// Minimum positive TTC between the ego and every other vehicle over frames
/// with `time <= until`. `None` means no positive TTC ever occurred.
pub fn ttc_min(trace: &RunTrace, until: f64) -> Option<f64> {
    let ego = trace.header.ego;
    let mut best: Option<f64> = None;
    for (frame, e) in trace.ego_samples() {
        if frame.time > until + 1e-9 {
            break;
        }
        for other in frame.vehicles.iter().filter(|v| v.id != ego) {
            if let Some(t) = ttc_pairwise(e.position(), e.velocity(), other.position(), other.velocity()) {
                if t > 0.0 {
                    best = Some(best.map_or(t, |b| b.min(t)));
                }
            }
        }
    }
    best
}

/// Points for a minimum TTC; `None` (never closing) scores 100.
pub fn ttc_score(tau_min: Option<f64>) -> f64 {
    match tau_min {
        None => 100.0,
        Some(t) if t > 2.0 => 100.0,
        Some(t) if t > 0.0 => (100.0 - 1.0 / t).max(0.0),
        Some(_) => 0.0,
    }
}

/// Population mean and standard deviation.
pub fn speed_stats(speeds: &[f64]) -> Result<(f64, f64), EvalError> {
    if speeds.is_empty() {
        return Err(EvalError::TraceTooShort { need: 1, have: 0 });
    }
    let n = speeds.len() as f64;
    let mu = speeds.iter().sum::<f64>() / n;
    let var = speeds.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    Ok((mu, var.sqrt()))
}

pub fn sv_score(sigma: f64, sigma_safe: f64) -> f64 {
    (100.0 * (1.0 - sigma / sigma_safe)).clamp(0.0, 100.0)
}

pub fn te_score(t: f64, t_limit: f64) -> f64 {
    (100.0 * (1.0 - t / t_limit)).clamp(0.0, 100.0)
}

/// Weighted task score, zero unless the goal was completed.
pub fn lampilot_score(ttc: f64, sv: f64, te: f64, w: &ScoreWeights, completed: bool) -> f64 {
    if completed {
        w.w_ttc * ttc + w.w_sv * sv + w.w_te * te
    } else {
        0.0
    }
}

/// Ride-quality figures of the ego.
///
/// Accelerations and jerks are finite differences of the world velocity
/// projected onto the ego frame at each sample. Speed variances use the
/// velocity components along and across the ego's current road segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comfort {
    pub accel_x: f64,
    pub jerk_x: f64,
    pub accel_y: f64,
    pub jerk_y: f64,
    pub sv_x: f64,
    pub sv_y: f64,
}

fn mean_abs(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().map(|x| x.abs()).sum::<f64>() / xs.len() as f64
    }
}

fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mu = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n
}

pub fn comfort_metrics(trace: &RunTrace, scenario: Option<&Scenario>) -> Result<Comfort, EvalError> {
    let samples: Vec<_> = trace.ego_samples().map(|(f, s)| (f.time, *s)).collect();
    if samples.len() < 3 {
        return Err(EvalError::TraceTooShort { need: 3, have: samples.len() });
    }
    let (mut ax, mut ay) = (Vec::new(), Vec::new());
    for w in samples.windows(2) {
        let (t0, a) = w[0];
        let (t1, b) = w[1];
        let acc = (b.velocity() - a.velocity()) * (1.0 / (t1 - t0));
        let h = Vec2::from_heading(a.heading);
        ax.push(acc.dot(h));
        ay.push(acc.dot(h.perp()));
    }
    let jerk = |a: &[f64]| -> Vec<f64> {
        a.windows(2).zip(samples.windows(2)).map(|(x, s)| (x[1] - x[0]) / (s[1].0 - s[0].0)).collect()
    };
    let (jx, jy) = (jerk(&ax), jerk(&ay));

    let (mut vx, mut vy) = (Vec::new(), Vec::new());
    for (_, s) in &samples {
        let heading = scenario
            .and_then(|sc| sc.initial.road.segment(s.segment).ok())
            .map_or(s.heading, |seg| seg.heading);
        let h = Vec2::from_heading(heading);
        vx.push(s.velocity().dot(h));
        vy.push(s.velocity().dot(h.perp()));
    }
    Ok(Comfort {
        accel_x: mean_abs(&ax),
        jerk_x: mean_abs(&jx),
        accel_y: mean_abs(&ay),
        jerk_y: mean_abs(&jy),
        sv_x: variance(&vx),
        sv_y: variance(&vy),
    })
}

/// Reference values the comfort score is relative to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComfortBaseline {
    pub speed_variance: f64,
    pub accel: f64,
    pub jerk: f64,
}

impl Default for ComfortBaseline {
    /// Highway car-following reference drive.
    fn default() -> Self {
        ComfortBaseline { speed_variance: 0.78, accel: 0.22, jerk: 2.50 }
    }
}

/// Baseline-relative comfort score in points.
pub fn talk2drive_score(
    tau_min: Option<f64>,
    speed_variance: f64,
    accel: f64,
    jerk: f64,
    baseline: &ComfortBaseline,
    w: &ScoreWeights,
) -> Result<f64, EvalError> {
    let base = [baseline.speed_variance, baseline.accel, baseline.jerk];
    if base.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
        return Err(EvalError::Config("comfort baseline values must be positive".into()));
    }
    let s_tau = if tau_min.is_none_or(|t| t >= w.tau_c) { 100.0 } else { 0.0 };
    let sub = |x: f64, b: f64| (100.0 - w.gamma * x / b).clamp(0.0, 100.0);
    let s = [s_tau, sub(speed_variance, base[0]), sub(accel, base[1]), sub(jerk, base[2])];
    Ok(s.iter().zip(w.comfort).map(|(s, w)| s * w).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfractionKind {
    Collision,
    RedLight,
    OffRoute,
    SpeedLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfractionCoefficients {
    pub collision: f64,
    pub red_light: f64,
    pub off_route: f64,
    pub speed_limit: f64,
}

impl Default for InfractionCoefficients {
    fn default() -> Self {
        InfractionCoefficients { collision: 0.60, red_light: 0.70, off_route: 0.85, speed_limit: 0.90 }
    }
}

impl InfractionCoefficients {
    pub fn get(&self, kind: InfractionKind) -> f64 {
        match kind {
            InfractionKind::Collision => self.collision,
            InfractionKind::RedLight => self.red_light,
            InfractionKind::OffRoute => self.off_route,
            InfractionKind::SpeedLimit => self.speed_limit,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        for c in [self.collision, self.red_light, self.off_route, self.speed_limit] {
            if !(c > 0.0 && c <= 1.0) {
                return Err(EvalError::Config(format!("infraction coefficient {c} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Infraction {
    pub kind: InfractionKind,
    pub time: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InfractionLedger {
    pub events: Vec<Infraction>,
}

impl InfractionLedger {
    pub fn push(&mut self, kind: InfractionKind, time: f64) {
        self.events.push(Infraction { kind, time });
    }

    pub fn count(&self, kind: InfractionKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }
}

/// Product of the coefficients of all recorded infractions.
pub fn infraction_penalty(ledger: &InfractionLedger, c: &InfractionCoefficients) -> f64 {
    ledger.events.iter().map(|e| c.get(e.kind)).product()
}

/// Route completion (points) scaled by the infraction penalty, in points.
pub fn driving_score(rc: f64, ip: f64) -> f64 {
    rc / 100.0 * ip * 100.0
}

/// Sustained time above the tolerated speed before a violation is logged (s).
pub const SPEEDING_GRACE: f64 = 1.0;
/// Speeds above this multiple of the posted limit count as speeding.
pub const SPEEDING_FACTOR: f64 = 1.1;

/// Scans a trace for infractions. Each is logged once per episode: a
/// collision per colliding pair, off-route and speeding per excursion.
pub fn detect_infractions(scenario: &Scenario, trace: &RunTrace) -> InfractionLedger {
    let mut ledger = InfractionLedger::default();
    let ego = trace.header.ego;
    let road = &scenario.initial.road;
    let lw = road.lane_width;

    let mut pairs: Vec<(VehicleId, VehicleId)> = Vec::new();
    let mut prev_pairs: Vec<(VehicleId, VehicleId)> = Vec::new();
    let mut off = false;
    let mut speeding_since: Option<f64> = None;
    let mut speeding_logged = false;
    let mut prev_sample = None;

    // segments the route touches
    let route_segments: Vec<_> = road
        .segments
        .iter()
        .filter(|seg| {
            scenario.route.waypoints().iter().any(|p| {
                let (s, d) = seg.to_local(*p);
                (0.0..=seg.length).contains(&s) && seg.contains_lateral(d, lw)
            })
        })
        .map(|seg| seg.id)
        .collect();

    for frame in &trace.frames {
        pairs.clear();
        for e in &frame.events {
            if let TraceEvent::Collision(c) = e {
                if c.involves(ego) {
                    pairs.push(c.ids);
                    if !prev_pairs.contains(&c.ids) {
                        ledger.push(InfractionKind::Collision, frame.time);
                    }
                }
            }
        }
        std::mem::swap(&mut pairs, &mut prev_pairs);

        let Some(s) = frame.vehicle(ego) else { continue };
        let Ok(seg) = road.segment(s.segment) else { continue };
        let (along, lateral) = seg.to_local(s.position());
        let off_road = (0.0..=seg.length).contains(&along) && !seg.contains_lateral(lateral, lw);
        let wrong_way = !route_segments.is_empty() && !route_segments.contains(&s.segment);
        let now_off = off_road || wrong_way;
        if now_off && !off {
            ledger.push(InfractionKind::OffRoute, frame.time);
        }
        off = now_off;

        if s.speed > SPEEDING_FACTOR * seg.speed_limit {
            let since = *speeding_since.get_or_insert(frame.time);
            if !speeding_logged && frame.time - since >= SPEEDING_GRACE - 1e-9 {
                ledger.push(InfractionKind::SpeedLimit, frame.time);
                speeding_logged = true;
            }
        } else {
            speeding_since = None;
            speeding_logged = false;
        }

        if let (Some(ix), Some(prev)) = (&road.intersection, prev_sample) {
            let (prev_seg, prev_s) = prev;
            if let (Some(sig), Ok(approach)) = (&ix.signal, road.segment(ix.approach)) {
                let before = prev_seg == ix.approach && prev_s < approach.length;
                let after = s.segment != ix.approach || along >= approach.length;
                if before && after && sig.is_red(frame.time) {
                    ledger.push(InfractionKind::RedLight, frame.time);
                }
            }
        }
        prev_sample = Some((s.segment, along));
    }
    ledger
}

/// Per-parameter ranges of the alignment score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRange {
    pub min: f64,
    pub lower: f64,
    pub upper: f64,
    pub max: f64,
}

impl AlignmentRange {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.min < self.lower && self.lower <= self.upper && self.upper < self.max {
            Ok(())
        } else {
            Err(EvalError::Config(format!("degenerate alignment range {self:?}")))
        }
    }
}

/// Trapezoid score of one parameter value.
pub fn alignment_term(x: f64, r: &AlignmentRange) -> f64 {
    if x < r.min || x > r.max || x.is_nan() {
        0.0
    } else if x < r.lower {
        100.0 * (x - r.min) / (r.lower - r.min)
    } else if x < r.upper {
        100.0
    } else {
        100.0 * (r.max - x) / (r.max - r.upper)
    }
}

/// Alignment ranges of the requested style taken from the parameter table.
pub fn style_ranges(table: &ParameterTable, style: DrivingStyle) -> [AlignmentRange; 6] {
    table.params.map(|p| {
        let (lower, upper) = p.band(style);
        AlignmentRange { min: p.min, lower, upper, max: p.max }
    })
}

/// Weighted average of the six parameter terms.
pub fn command_alignment(
    matrix: &ActionMatrix,
    ranges: &[AlignmentRange; 6],
    weights: &[f64; 6],
) -> Result<f64, EvalError> {
    for r in ranges {
        r.validate()?;
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || weights.iter().any(|w| *w < 0.0) {
        return Err(EvalError::Config("alignment weights must be non-negative with positive sum".into()));
    }
    let x = matrix.to_array();
    Ok((0..6).map(|i| weights[i] * alignment_term(x[i], &ranges[i])).sum::<f64>() / total)
}

/// Scalar conservativeness of a parameter set; lower is more conservative.
/// Mean normalized longitudinal gain minus normalized steering penalty.
pub fn conservativeness_index(m: &ActionMatrix, table: &ParameterTable) -> f64 {
    let x = m.to_array();
    let norm = |i: usize| {
        let p = &table.params[i];
        (x[i] - p.min) / (p.max - p.min)
    };
    (norm(0) + norm(1) + norm(2)) / 3.0 - norm(5)
}

/// Share (points) of adverse-weather sets more conservative than the clear-weather set.
pub fn scenario_alignment(sunny: &ActionMatrix, adverse: &[ActionMatrix], table: &ParameterTable) -> Option<f64> {
    if adverse.is_empty() {
        return None;
    }
    let reference = conservativeness_index(sunny, table);
    let more = adverse.iter().filter(|m| conservativeness_index(m, table) < reference).count();
    Some(100.0 * more as f64 / adverse.len() as f64)
}

pub fn takeover_rate(takeovers: usize, trips: usize) -> Option<f64> {
    (trips > 0).then(|| takeovers as f64 / trips as f64)
}

/// Relative reduction in percent of `ours` against `base`.
pub fn takeover_reduction(base: f64, ours: f64) -> Option<f64> {
    (base > 0.0).then(|| (1.0 - ours / base) * 100.0)
}

/// Everything measured about one closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCard {
    pub scenario_id: String,
    pub completed: bool,
    pub collided: bool,
    pub completion_time: Option<f64>,
    /// Time charged to the run: completion time, or the time limit.
    pub time: f64,
    pub tau_min: Option<f64>,
    pub ttc: f64,
    pub sv: f64,
    pub te: f64,
    pub score: f64,
    pub mean_speed: f64,
    pub speed_std: f64,
    pub comfort: Option<Comfort>,
    pub rc: f64,
    pub ip: f64,
    pub ds: f64,
    pub infractions: Vec<Infraction>,
    pub latency: f64,
}

pub fn evaluate(
    scenario: &Scenario,
    trace: &RunTrace,
    weights: &ScoreWeights,
    coefficients: &InfractionCoefficients,
    latency: f64,
) -> Result<ScoreCard, EvalError> {
    let outcome = goal_satisfied(scenario, trace);
    let time = match (outcome.completed, outcome.completion_time) {
        (true, Some(t)) => t,
        _ => scenario.time_limit,
    };
    let speeds: Vec<f64> = trace
        .ego_samples()
        .filter(|(f, _)| f.time <= time + 1e-9)
        .map(|(_, s)| s.speed)
        .collect();
    let (mean_speed, speed_std) = speed_stats(&speeds)?;
    let tau_min = ttc_min(trace, time);
    let ttc = ttc_score(tau_min);
    let sv = sv_score(speed_std, weights.sigma_safe);
    let te = te_score(time, scenario.time_limit);
    let ledger = detect_infractions(scenario, trace);
    let ip = infraction_penalty(&ledger, coefficients);
    let rc = route_progress(&scenario.route, trace);
    Ok(ScoreCard {
        scenario_id: scenario.id.clone(),
        completed: outcome.completed,
        collided: trace.ego_collided(),
        completion_time: outcome.completion_time,
        time,
        tau_min,
        ttc,
        sv,
        te,
        score: lampilot_score(ttc, sv, te, weights, outcome.completed),
        mean_speed,
        speed_std,
        comfort: comfort_metrics(trace, Some(scenario)).ok(),
        rc,
        ip,
        ds: driving_score(rc, ip),
        infractions: ledger.events,
        latency,
    })
}

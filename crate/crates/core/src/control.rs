//! Decoupled longitudinal PID and lateral linear MPC.
//!
//! The lateral controller works on a two-state error model (lateral offset,
//! heading error) linearized from the kinematic bicycle:
//!
//! ```text
//! e[k+1] = A e[k] + B d[k],   A = [[1, v dt], [0, 1]],   B = [0, v dt / L]
//! J      = sum_k e[k]' Q e[k] + R d[k]^2,   Q = diag(W_l, W_h),   R = W_s
//! ```
//!
//! The unconstrained QP is solved exactly through its normal equations and
//! only the first move is applied, clamped to the steering limit.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::route::RouteSpec;
use crate::sim::{wrap_angle, Segment, Vec2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("rejected action matrix: {0}")]
    RejectedMatrix(String),
}

/// The six controller parameters an agent may emit, in row order
/// `[K_p K_i K_d; W_l W_h W_s]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionMatrix {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub w_lat: f64,
    pub w_head: f64,
    pub w_steer: f64,
}

impl ActionMatrix {
    pub const LABELS: [&'static str; 6] = ["K_p", "K_i", "K_d", "W_l", "W_h", "W_s"];

    pub fn from_array(a: [f64; 6]) -> Self {
        ActionMatrix { kp: a[0], ki: a[1], kd: a[2], w_lat: a[3], w_head: a[4], w_steer: a[5] }
    }

    pub fn to_array(self) -> [f64; 6] {
        [self.kp, self.ki, self.kd, self.w_lat, self.w_head, self.w_steer]
    }

    pub fn pid(&self) -> PidGains {
        PidGains { kp: self.kp, ki: self.ki, kd: self.kd }
    }

    pub fn mpc(&self) -> MpcWeights {
        MpcWeights { lateral: self.w_lat, heading: self.w_head, steering: self.w_steer }
    }

    pub fn render(&self) -> String {
        format!(
            "K_p: {}\nK_i: {}\nK_d: {}\nW_l: {}\nW_h: {}\nW_s: {}",
            self.kp, self.ki, self.kd, self.w_lat, self.w_head, self.w_steer
        )
    }
}

impl Default for ActionMatrix {
    fn default() -> Self {
        ParameterTable::default().defaults()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DrivingStyle {
    Conservative,
    Moderate,
    Aggressive,
}

/// Bounds and style bands for one controller parameter.
///
/// `[min, max]` is the admissible range used for clamping. The style bands
/// are the `[lower, upper)` intervals a command of that style should land in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub min: f64,
    pub max: f64,
    pub default: f64,
    pub conservative: (f64, f64),
    pub moderate: (f64, f64),
    pub aggressive: (f64, f64),
}

impl ParamSpec {
    pub fn band(&self, style: DrivingStyle) -> (f64, f64) {
        match style {
            DrivingStyle::Conservative => self.conservative,
            DrivingStyle::Moderate => self.moderate,
            DrivingStyle::Aggressive => self.aggressive,
        }
    }
}

/// Single source of truth for parameter bounds, shared by clamping and
/// command-alignment scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterTable {
    pub params: [ParamSpec; 6],
}

impl Default for ParameterTable {
    fn default() -> Self {
        let p = |min, max, default, c, m, a| ParamSpec {
            min,
            max,
            default,
            conservative: c,
            moderate: m,
            aggressive: a,
        };
        ParameterTable {
            params: [
                // K_p
                p(0.05, 2.0, 0.6, (0.2, 0.45), (0.45, 0.8), (0.8, 1.4)),
                // K_i
                p(0.0, 0.3, 0.02, (0.005, 0.015), (0.015, 0.04), (0.04, 0.12)),
                // K_d
                p(0.0, 0.3, 0.05, (0.01, 0.04), (0.04, 0.08), (0.08, 0.18)),
                // W_l
                p(0.1, 10.0, 1.0, (0.5, 1.0), (1.0, 2.0), (2.0, 5.0)),
                // W_h
                p(0.1, 10.0, 2.0, (1.0, 2.0), (2.0, 3.0), (3.0, 6.0)),
                // W_s: larger means smoother steering
                p(0.1, 20.0, 1.0, (2.0, 6.0), (0.8, 2.0), (0.2, 0.8)),
            ],
        }
    }
}

impl ParameterTable {
    pub fn defaults(&self) -> ActionMatrix {
        let d: Vec<f64> = self.params.iter().map(|p| p.default).collect();
        ActionMatrix::from_array([d[0], d[1], d[2], d[3], d[4], d[5]])
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        for (label, p) in ActionMatrix::LABELS.iter().zip(&self.params) {
            if !(p.min < p.max) || !(p.min..=p.max).contains(&p.default) {
                return Err(ControlError::Config(format!("bad bounds for {label}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClampEvent {
    pub parameter: String,
    pub requested: f64,
    pub applied: f64,
}

/// Clamps every entry into its bound. Non-finite entries reject the matrix.
pub fn apply_action_matrix(
    matrix: &ActionMatrix,
    table: &ParameterTable,
) -> Result<(ActionMatrix, Vec<ClampEvent>), ControlError> {
    let raw = matrix.to_array();
    let mut out = [0.0; 6];
    let mut events = Vec::new();
    for i in 0..6 {
        let label = ActionMatrix::LABELS[i];
        if !raw[i].is_finite() {
            return Err(ControlError::RejectedMatrix(format!("{label} is not finite")));
        }
        let spec = &table.params[i];
        out[i] = raw[i].clamp(spec.min, spec.max);
        if out[i] != raw[i] {
            events.push(ClampEvent { parameter: label.to_string(), requested: raw[i], applied: out[i] });
        }
    }
    Ok((ActionMatrix::from_array(out), events))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PidState {
    /// Running sum of error times dt.
    pub integral: f64,
    pub prev_error: f64,
}

/// One PID update on speed error `error` (m/s). Returns the clamped
/// acceleration command and the next state.
pub fn pid_step(
    state: &PidState,
    error: f64,
    dt: f64,
    gains: &PidGains,
    accel_limit: f64,
) -> (f64, PidState) {
    debug_assert!(dt > 0.0);
    let mut integral = state.integral + error * dt;
    if gains.ki > 0.0 {
        let bound = accel_limit / gains.ki;
        integral = integral.clamp(-bound, bound);
    }
    let derivative = (error - state.prev_error) / dt;
    let accel = gains.kp * error + gains.ki * integral + gains.kd * derivative;
    (accel.clamp(-accel_limit, accel_limit), PidState { integral, prev_error: error })
}

/// Lateral offset (left positive), heading error and linearization speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorState {
    pub e_lat: f64,
    pub e_head: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackError {
    pub error: ErrorState,
    /// Pose projected beyond either end of the route.
    pub clamped: bool,
}

/// Error of a pose relative to the nearest route segment.
pub fn track_error(route: &RouteSpec, position: Vec2, heading: f64, speed: f64) -> TrackError {
    let p = route.project(position);
    TrackError {
        error: ErrorState {
            e_lat: p.lateral,
            e_head: wrap_angle(heading - p.tangent_heading),
            v: speed,
        },
        clamped: p.clamped,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcWeights {
    pub lateral: f64,
    pub heading: f64,
    pub steering: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    pub horizon: usize,
    pub dt: f64,
    pub wheelbase: f64,
    pub max_steer: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig { horizon: 10, dt: 0.1, wheelbase: 2.5, max_steer: 0.6 }
    }
}

/// Optimal unconstrained steering sequence over the horizon.
pub fn mpc_plan(e: &ErrorState, cfg: &MpcConfig, w: &MpcWeights) -> Result<Vec<f64>, ControlError> {
    let n = cfg.horizon;
    if n == 0 {
        return Err(ControlError::Config("horizon must be at least 1".into()));
    }
    if !(cfg.dt > 0.0 && cfg.wheelbase > 0.0) {
        return Err(ControlError::Config("dt and wheelbase must be positive".into()));
    }
    if [w.lateral, w.heading, w.steering].iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(ControlError::Config("MPC weights must be finite and non-negative".into()));
    }
    if e.v <= 0.0 {
        return Ok(vec![0.0; n]);
    }
    let a12 = e.v * cfg.dt;
    let b2 = e.v * cfg.dt / cfg.wheelbase;

    // A^k = [[1, k*a12], [0, 1]]; A^k B = [k*a12*b2, b2]
    let mut f = DMatrix::<f64>::zeros(2 * n, 2);
    let mut g = DMatrix::<f64>::zeros(2 * n, n);
    for k in 1..=n {
        let r = 2 * (k - 1);
        f[(r, 0)] = 1.0;
        f[(r, 1)] = k as f64 * a12;
        f[(r + 1, 1)] = 1.0;
        for j in 0..k {
            let p = (k - 1 - j) as f64;
            g[(r, j)] = p * a12 * b2;
            g[(r + 1, j)] = b2;
        }
    }
    let mut q = DVector::<f64>::zeros(2 * n);
    for k in 0..n {
        q[2 * k] = w.lateral;
        q[2 * k + 1] = w.heading;
    }
    let qg = DMatrix::from_fn(2 * n, n, |i, j| q[i] * g[(i, j)]);
    let mut h = g.transpose() * &qg;
    for i in 0..n {
        h[(i, i)] += w.steering;
    }
    let e0 = DVector::from_vec(vec![e.e_lat, e.e_head]);
    let free = &f * e0;
    let rhs = -(qg.transpose() * free);
    let chol = h
        .cholesky()
        .ok_or_else(|| ControlError::Config("MPC normal matrix is singular; check weights".into()))?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

/// First move of the optimal plan, clamped to the steering limit.
pub fn mpc_steering(e: &ErrorState, cfg: &MpcConfig, w: &MpcWeights) -> Result<f64, ControlError> {
    let plan = mpc_plan(e, cfg, w)?;
    Ok(plan[0].clamp(-cfg.max_steer, cfg.max_steer))
}

/// Lateral reference on a straight segment: lane keeping when `from == to`,
/// otherwise a half-cosine lane change of length `length` starting at `s_start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanePlan {
    pub segment: Segment,
    pub from_offset: f64,
    pub to_offset: f64,
    pub s_start: f64,
    pub length: f64,
}

impl LanePlan {
    pub fn keep(segment: &Segment, offset: f64) -> Self {
        LanePlan { segment: segment.clone(), from_offset: offset, to_offset: offset, s_start: 0.0, length: 1.0 }
    }

    pub fn change(segment: &Segment, from: f64, to: f64, s_start: f64, length: f64) -> Self {
        LanePlan { segment: segment.clone(), from_offset: from, to_offset: to, s_start, length: length.max(1.0) }
    }

    pub fn is_change(&self) -> bool {
        self.from_offset != self.to_offset
    }

    /// Reference offset and slope d(offset)/ds at arc length `s`.
    pub fn reference(&self, s: f64) -> (f64, f64) {
        let delta = self.to_offset - self.from_offset;
        let u = (s - self.s_start) / self.length;
        if delta == 0.0 || u >= 1.0 {
            (self.to_offset, 0.0)
        } else if u <= 0.0 {
            (self.from_offset, 0.0)
        } else {
            let pi = std::f64::consts::PI;
            let off = self.from_offset + delta * (1.0 - (pi * u).cos()) / 2.0;
            let slope = delta * pi / (2.0 * self.length) * (pi * u).sin();
            (off, slope)
        }
    }

    /// Whether the maneuver portion of the plan is behind the vehicle at `s`.
    pub fn finished_at(&self, s: f64) -> bool {
        !self.is_change() || s >= self.s_start + self.length
    }

    pub fn error(&self, position: Vec2, heading: f64, speed: f64) -> ErrorState {
        let (s, d) = self.segment.to_local(position);
        let (off, slope) = self.reference(s);
        ErrorState {
            e_lat: d - off,
            e_head: wrap_angle(heading - self.segment.heading - slope.atan()),
            v: speed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proportional_only() {
        let g = PidGains { kp: 1.0, ki: 0.0, kd: 0.0 };
        let (a, _) = pid_step(&PidState { integral: 0.0, prev_error: 2.0 }, 2.0, 0.1, &g, 50.0);
        assert_eq!(a, 2.0);
    }

    #[test]
    fn integral_accumulates() {
        let g = PidGains { kp: 0.0, ki: 1.0, kd: 0.0 };
        let mut s = PidState::default();
        let mut a = 0.0;
        for _ in 0..10 {
            (a, s) = pid_step(&s, 1.0, 0.1, &g, 50.0);
        }
        assert!((s.integral - 1.0).abs() < 1e-12);
        assert!((a - 1.0).abs() < 1e-12);
    }

    #[test]
    fn derivative_kick_then_zero() {
        let g = PidGains { kp: 0.0, ki: 0.0, kd: 1.0 };
        let (a1, s) = pid_step(&PidState::default(), 1.0, 0.1, &g, 50.0);
        let (a2, _) = pid_step(&s, 1.0, 0.1, &g, 50.0);
        assert!((a1 - 10.0).abs() < 1e-12);
        assert_eq!(a2, 0.0);
    }

    #[test]
    fn zero_gains_output_zero() {
        let g = PidGains { kp: 0.0, ki: 0.0, kd: 0.0 };
        let mut s = PidState::default();
        for e in [3.0, -2.0, 7.5, 0.1] {
            let (a, n) = pid_step(&s, e, 0.1, &g, 3.0);
            assert_eq!(a, 0.0);
            s = n;
        }
    }

    #[test]
    fn anti_windup_bounds_integral() {
        let g = PidGains { kp: 0.0, ki: 0.5, kd: 0.0 };
        let mut s = PidState::default();
        for _ in 0..1000 {
            (_, s) = pid_step(&s, 10.0, 0.1, &g, 3.0);
        }
        assert!((s.integral - 6.0).abs() < 1e-12);
    }

    #[test]
    fn mpc_zero_error_zero_steer() {
        let e = ErrorState { e_lat: 0.0, e_head: 0.0, v: 10.0 };
        let w = MpcWeights { lateral: 1.0, heading: 1.0, steering: 1.0 };
        assert_eq!(mpc_steering(&e, &MpcConfig::default(), &w).unwrap(), 0.0);
    }

    #[test]
    fn mpc_single_step_closed_form() {
        let e = ErrorState { e_lat: 0.0, e_head: 0.2, v: 10.0 };
        let cfg = MpcConfig { horizon: 1, ..MpcConfig::default() };
        let w = MpcWeights { lateral: 1.0, heading: 1.0, steering: 1.0 };
        let d = mpc_steering(&e, &cfg, &w).unwrap();
        assert!((d - (-0.08 / 1.16)).abs() < 1e-12);
        assert!((d + 0.06897).abs() < 1e-5);
    }

    #[test]
    fn mpc_standstill_returns_zero() {
        let e = ErrorState { e_lat: 1.0, e_head: 0.2, v: 0.0 };
        let w = MpcWeights { lateral: 1.0, heading: 1.0, steering: 1.0 };
        assert_eq!(mpc_steering(&e, &MpcConfig::default(), &w).unwrap(), 0.0);
    }

    #[test]
    fn mpc_all_zero_weights_is_config_error() {
        let e = ErrorState { e_lat: 1.0, e_head: 0.0, v: 10.0 };
        let w = MpcWeights { lateral: 0.0, heading: 0.0, steering: 0.0 };
        assert!(matches!(mpc_steering(&e, &MpcConfig::default(), &w), Err(ControlError::Config(_))));
    }

    #[test]
    fn track_error_cases() {
        let r = RouteSpec::straight(Vec2::ZERO, Vec2::new(100.0, 0.0), 5.0).unwrap();
        let t = track_error(&r, Vec2::new(10.0, 0.0), 0.0, 5.0);
        assert_eq!((t.error.e_lat, t.error.e_head), (0.0, 0.0));
        let t = track_error(&r, Vec2::new(10.0, 1.0), 0.0, 5.0);
        assert_eq!((t.error.e_lat, t.error.e_head), (1.0, 0.0));
        let t = track_error(&r, Vec2::new(10.0, 0.0), 0.2, 5.0);
        assert_eq!((t.error.e_lat, t.error.e_head), (0.0, 0.2));
        let t = track_error(&r, Vec2::new(120.0, 0.0), 0.0, 5.0);
        assert!(t.clamped);
    }

    #[test]
    fn action_matrix_clamping() {
        let table = ParameterTable::default();
        let m = table.defaults();
        let (applied, ev) = apply_action_matrix(&m, &table).unwrap();
        assert_eq!(applied, m);
        assert!(ev.is_empty());

        let hot = ActionMatrix { kp: 9.0, ..m };
        let (applied, ev) = apply_action_matrix(&hot, &table).unwrap();
        assert_eq!(applied.kp, 2.0);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].parameter, "K_p");

        let bad = ActionMatrix { ki: f64::NAN, ..m };
        assert!(matches!(apply_action_matrix(&bad, &table), Err(ControlError::RejectedMatrix(_))));
    }

    #[test]
    fn lane_change_profile_endpoints() {
        let seg = Segment {
            id: crate::sim::SegmentId(0),
            origin: Vec2::ZERO,
            heading: 0.0,
            length: 500.0,
            lane_count: 3,
            speed_limit: 30.0,
        };
        let plan = LanePlan::change(&seg, 4.0, 8.0, 100.0, 40.0);
        assert_eq!(plan.reference(90.0), (4.0, 0.0));
        assert_eq!(plan.reference(150.0), (8.0, 0.0));
        let (mid, slope) = plan.reference(120.0);
        assert!((mid - 6.0).abs() < 1e-12);
        assert!(slope > 0.0);
    }

    #[test]
    fn default_table_is_valid() {
        ParameterTable::default().validate().unwrap();
    }
}

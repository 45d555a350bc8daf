//! Drives yielded intents over simulator ticks.
//!
//! Longitudinal control is a speed PID (gains from the action matrix) capped
//! by a constant-time-headway follower where an intent watches a lead.
//! Lateral control is the linear MPC tracking either a lane plan or, for
//! turns, a line-arc-line path with curvature feedforward.

use std::sync::Arc;

use crate::control::{mpc_steering, pid_step, track_error, ActionMatrix, LanePlan, MpcConfig, PidState};
use crate::dsl::{start_execution, ActionIntent, Execution, Program, ResumeResult};
use crate::route::RouteSpec;
use crate::sim::{
    lane_clear, lead_in_lane, sensor_snapshot, Control, Direction, SegmentId, SimError, TraceEvent, Vec2,
    VehicleId, VehicleState, WorldState,
};
use crate::traffic::LANE_CHANGE_DURATION;

/// Symmetric bound of the speed PID output (m/s^2).
pub const ACCEL_LIMIT: f64 = 3.0;
/// Hardest braking the follower may command (m/s^2).
pub const MAX_BRAKE: f64 = 6.0;
/// Speed band in which `proceed` counts as reached (m/s).
pub const SPEED_TOLERANCE: f64 = 0.5;
pub const STOPPED_SPEED: f64 = 0.1;
pub const TURN_RADIUS: f64 = 8.0;
pub const TURN_SPEED: f64 = 5.0;
pub const TURN_DECEL: f64 = 2.0;
/// Arc length into the exit segment at which a turn is done (m).
pub const TURN_DONE_PROGRESS: f64 = 5.0;
/// Headway used while an intent only needs to avoid the car ahead (s).
pub const GUARD_HEADWAY: f64 = 1.5;
pub const STANDSTILL_GAP: f64 = 2.0;
const ACC_GAP_GAIN: f64 = 0.3;
const ACC_SPEED_GAIN: f64 = 1.0;
const ACC_MAX_ACCEL: f64 = 2.0;

/// Constant-time-headway follower. `None` lead means no constraint.
pub fn acc_accel(v: f64, lead: Option<(f64, f64)>, headway: f64) -> f64 {
    let Some((gap, v_lead)) = lead else {
        return f64::INFINITY;
    };
    let desired = STANDSTILL_GAP + v * headway;
    let mut a = ACC_GAP_GAIN * (gap - desired) + ACC_SPEED_GAIN * (v_lead - v);
    // cannot stop in the remaining gap at comfortable rates
    let closing = (v - v_lead).max(0.0);
    if gap <= STANDSTILL_GAP || closing * closing / (2.0 * MAX_BRAKE) + 1.0 >= gap {
        a = -MAX_BRAKE;
    }
    a.clamp(-MAX_BRAKE, ACC_MAX_ACCEL)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentStatus {
    Active,
    Completed,
    TimedOut,
}

#[derive(Debug, Clone, Default)]
struct SpeedLoop {
    state: PidState,
    primed: bool,
}

impl SpeedLoop {
    /// PID toward `target`, capped by `cap`. The integrator only advances
    /// while the PID is the active, unsaturated command.
    fn track(&mut self, v: f64, target: f64, cap: f64, dt: f64, m: &ActionMatrix) -> f64 {
        let error = target - v;
        if !self.primed {
            self.state.prev_error = error;
            self.primed = true;
        }
        let (a, mut next) = pid_step(&self.state, error, dt, &m.pid(), ACCEL_LIMIT);
        if a <= cap {
            // conditional integration: a saturated output does not wind up
            if a.abs() >= ACCEL_LIMIT {
                next.integral = self.state.integral;
            }
            self.state = next;
            a
        } else {
            self.state.prev_error = error;
            cap
        }
    }
}

#[derive(Debug, Clone)]
struct TurnPath {
    route: RouteSpec,
    exit: SegmentId,
    /// Route arc length interval of the curve and its signed curvature.
    arc: Option<(f64, f64, f64)>,
}

fn line_intersection(a: Vec2, da: Vec2, b: Vec2, db: Vec2) -> Option<Vec2> {
    let denom = da.cross(db);
    if denom.abs() < 1e-9 {
        return None;
    }
    let t = (b - a).cross(db) / denom;
    Some(a + da * t)
}

fn turn_path(world: &WorldState, ego: &VehicleState, dir: Direction) -> Option<TurnPath> {
    let ix = world.road.intersection.as_ref()?;
    if ego.segment != ix.approach {
        return None;
    }
    let approach = world.road.segment(ix.approach).ok()?;
    let exit = world.road.exit(dir)?;
    let lw = world.road.lane_width;
    let lane = ego.lane_index.min(exit.lane_count - 1);
    let a = approach.lane_point(approach.length, ego.lane_index, lw);
    let e = exit.lane_point(0.0, lane, lw);
    let (da, de) = (approach.direction(), exit.direction());
    let far = exit.lane_point(exit.length, lane, lw);
    let ahead = |p: Vec2| (p - ego.position).dot(da) > 0.5;

    let mut pts = vec![ego.position];
    let mut arc_ends = None;
    match line_intersection(a, da, e, de).filter(|_| dir != Direction::Straight) {
        Some(corner) => {
            let left = da.cross(de) > 0.0;
            let sign = if left { 1.0 } else { -1.0 };
            let start = corner - da * TURN_RADIUS;
            let end = corner + de * TURN_RADIUS;
            let center = start + da.perp() * (sign * TURN_RADIUS);
            let (h0, h1) = (da.angle(), de.angle());
            let sweep = crate::sim::wrap_angle(h1 - h0);
            let n = 18;
            for k in 0..=n {
                let h = h0 + sweep * k as f64 / n as f64;
                let p = center + Vec2::new(h.sin(), -h.cos()) * (sign * TURN_RADIUS);
                if k == n || ahead(p) {
                    pts.push(p);
                }
            }
            arc_ends = Some((start, end, sign / TURN_RADIUS));
        }
        None => {
            if ahead(a) {
                pts.push(a);
            }
            pts.push(e);
        }
    }
    pts.push(far);
    pts.dedup_by(|p, q| (*p - *q).norm() < 0.05);
    let route = RouteSpec::new(pts).ok()?;
    let arc = arc_ends.map(|(start, end, kappa)| (route.project(start).s, route.project(end).s, kappa));
    Some(TurnPath { route, exit: exit.id, arc })
}

#[derive(Debug, Clone)]
enum Lateral {
    Lane { plan: LanePlan, target: usize },
    Path(TurnPath),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PullStage {
    Moving,
    Braking,
}

/// Executes one intent until completion or timeout, then keeps holding it.
#[derive(Debug, Clone)]
pub struct IntentExecutor {
    intent: ActionIntent,
    started: f64,
    status: IntentStatus,
    speed: SpeedLoop,
    hold_speed: f64,
    lateral: Option<Lateral>,
    pull: PullStage,
}

impl IntentExecutor {
    pub fn new(intent: ActionIntent, world: &WorldState, ego: VehicleId) -> Result<Self, SimError> {
        let me = world.vehicle(ego)?;
        let limit = world.road.segment(me.segment)?.speed_limit;
        Ok(IntentExecutor {
            intent,
            started: world.time,
            status: IntentStatus::Active,
            speed: SpeedLoop::default(),
            hold_speed: me.speed.max(3.0).min(limit),
            lateral: None,
            pull: PullStage::Moving,
        })
    }

    pub fn intent(&self) -> ActionIntent {
        self.intent
    }

    pub fn status(&self) -> IntentStatus {
        self.status
    }

    pub fn started(&self) -> f64 {
        self.started
    }

    fn keep(world: &WorldState, me: &VehicleState) -> Result<Lateral, SimError> {
        let seg = world.road.segment(me.segment)?;
        let offset = seg.lane_offset(me.lane_index, world.road.lane_width);
        Ok(Lateral::Lane { plan: LanePlan::keep(seg, offset), target: me.lane_index })
    }

    fn change(world: &WorldState, me: &VehicleState, to: usize) -> Result<Lateral, SimError> {
        let seg = world.road.segment(me.segment)?;
        let lw = world.road.lane_width;
        let (s, _) = seg.to_local(me.position);
        let length = (me.speed * LANE_CHANGE_DURATION).max(10.0);
        let plan = LanePlan::change(seg, seg.lane_offset(me.lane_index, lw), seg.lane_offset(to, lw), s, length);
        Ok(Lateral::Lane { plan, target: to })
    }

    fn first_lateral(&self, world: &WorldState, me: &VehicleState) -> Result<(Lateral, bool), SimError> {
        let n = world.road.segment(me.segment)?.lane_count;
        Ok(match self.intent {
            ActionIntent::ChangeLane { direction } => {
                let to = match direction {
                    Direction::Left if me.lane_index > 0 => Some(me.lane_index - 1),
                    Direction::Right if me.lane_index + 1 < n => Some(me.lane_index + 1),
                    _ => None,
                };
                match to {
                    Some(to) => (Self::change(world, me, to)?, false),
                    None => (Self::keep(world, me)?, true),
                }
            }
            ActionIntent::Turn { direction } => match turn_path(world, me, direction) {
                Some(p) => (Lateral::Path(p), false),
                None => (Self::keep(world, me)?, true),
            },
            _ => (Self::keep(world, me)?, false),
        })
    }

    /// One control tick. `matrix` supplies PID gains and MPC weights.
    pub fn step(&mut self, world: &WorldState, ego: VehicleId, matrix: &ActionMatrix) -> Result<Control, SimError> {
        let me = world.vehicle(ego)?.clone();
        let seg = world.road.segment(me.segment)?.clone();
        let dyn_ = world.dynamics;
        let dt = dyn_.dt;
        let limit = seg.speed_limit;
        let v = me.speed;
        let mut done = false;

        if self.lateral.is_none() {
            let (lat, trivially_done) = self.first_lateral(world, &me)?;
            self.lateral = Some(lat);
            done |= trivially_done;
        }
        // lane plans are bound to a segment; re-anchor after crossing onto another one
        if let Some(Lateral::Lane { plan, .. }) = &self.lateral {
            if plan.segment.id != me.segment {
                self.lateral = Some(Self::keep(world, &me)?);
            }
        }
        if self.intent == ActionIntent::PullOver && self.pull == PullStage::Moving {
            if let Some(Lateral::Lane { plan, target }) = &self.lateral {
                let (s, _) = seg.to_local(me.position);
                let settled = plan.finished_at(s) && plan.error(me.position, me.heading, v).e_lat.abs() < 0.3;
                if settled && *target + 1 < seg.lane_count {
                    if me.lane_index == *target && lane_clear(world, ego, Direction::Right)? {
                        self.lateral = Some(Self::change(world, &me, target + 1)?);
                    }
                } else if settled {
                    self.pull = PullStage::Braking;
                }
            }
        }

        let lead_on = |lane: usize| lead_in_lane(world, &me, lane).map(|(l, gap)| (gap, l.speed));
        let guard = |lane: usize| acc_accel(v, lead_on(lane), GUARD_HEADWAY);

        let mpc_cfg =
            MpcConfig { dt, wheelbase: dyn_.wheelbase, max_steer: dyn_.max_steer, ..MpcConfig::default() };
        let weights = matrix.mpc();
        let mpc = |e| mpc_steering(&e, &mpc_cfg, &weights).map_err(|e| SimError::Config(e.to_string()));

        let (steer, lane_target, path_progress) = match self.lateral.as_ref().expect("lateral set above") {
            Lateral::Lane { plan, target } => (mpc(plan.error(me.position, me.heading, v))?, *target, None),
            Lateral::Path(path) => {
                let te = track_error(&path.route, me.position, me.heading, v);
                let proj = path.route.project(me.position);
                let ff = match path.arc {
                    Some((s0, s1, kappa)) if proj.s >= s0 && proj.s <= s1 => (dyn_.wheelbase * kappa).atan(),
                    _ => 0.0,
                };
                let steer = (mpc(te.error)? + ff).clamp(-dyn_.max_steer, dyn_.max_steer);
                (steer, me.lane_index, Some(proj.s))
            }
        };

        let accel = match self.intent {
            ActionIntent::Proceed { speed } => {
                let target = speed.clamp(0.0, dyn_.max_speed);
                if (v - target).abs() < SPEED_TOLERANCE {
                    done = true;
                }
                self.speed.track(v, target, f64::INFINITY, dt, matrix)
            }
            ActionIntent::Stop => {
                if v < STOPPED_SPEED {
                    done = true;
                }
                if v > 0.0 {
                    self.speed.track(v, 0.0, f64::INFINITY, dt, matrix).min(-1.0)
                } else {
                    0.0
                }
            }
            ActionIntent::FollowLead { headway } => {
                let lead = lead_on(me.lane_index);
                if let Some((gap, v_lead)) = lead {
                    let desired = STANDSTILL_GAP + v * headway;
                    if (gap - desired).abs() <= (0.1 * desired).max(1.0) && (v_lead - v).abs() < SPEED_TOLERANCE {
                        done = true;
                    }
                } else if (v - limit).abs() < SPEED_TOLERANCE {
                    done = true;
                }
                self.speed.track(v, limit, acc_accel(v, lead, headway), dt, matrix)
            }
            ActionIntent::ChangeLane { .. } => {
                if let Some(Lateral::Lane { plan, target }) = &self.lateral {
                    let (s, _) = seg.to_local(me.position);
                    let e = plan.error(me.position, me.heading, v);
                    if me.lane_index == *target && plan.finished_at(s) && e.e_lat.abs() < 0.3 && e.e_head.abs() < 0.05 {
                        done = true;
                    }
                }
                let cap = guard(me.lane_index).min(guard(lane_target));
                self.speed.track(v, self.hold_speed, cap, dt, matrix)
            }
            ActionIntent::Turn { .. } => {
                let mut target = limit;
                if let (Some(Lateral::Path(path)), Some(s)) = (&self.lateral, path_progress) {
                    if let Some((s0, s1, _)) = path.arc {
                        if s <= s1 {
                            target = limit.min((TURN_SPEED.powi(2) + 2.0 * TURN_DECEL * (s0 - s).max(0.0)).sqrt());
                        }
                    }
                    let exit = world.road.segment(path.exit)?;
                    if me.segment == path.exit && exit.to_local(me.position).0 >= TURN_DONE_PROGRESS {
                        done = true;
                    }
                }
                self.speed.track(v, target, guard(me.lane_index), dt, matrix)
            }
            ActionIntent::PullOver => match self.pull {
                PullStage::Moving => {
                    let cap = guard(me.lane_index).min(guard(lane_target));
                    self.speed.track(v, self.hold_speed, cap, dt, matrix)
                }
                PullStage::Braking => {
                    if v < STOPPED_SPEED {
                        done = true;
                    }
                    if v > 0.0 {
                        -(v / 1.0).clamp(0.5, 2.5)
                    } else {
                        0.0
                    }
                }
            },
        };

        // a finished turn hands over to plain lane keeping on the exit
        if let Some(Lateral::Path(path)) = &self.lateral {
            if me.segment == path.exit && done {
                self.lateral = Some(Self::keep(world, &me)?);
            }
        }

        if self.status == IntentStatus::Active {
            if done {
                self.status = IntentStatus::Completed;
            } else if world.time - self.started >= self.intent.timeout() - 1e-9 {
                self.status = IntentStatus::TimedOut;
            }
        }
        Ok(Control::new(accel, steer))
    }
}

/// Resumes a program whenever the running intent has finished and drives the
/// current intent every tick.
#[derive(Debug, Clone)]
pub struct ProgramDriver {
    execution: Option<Execution>,
    current: Option<IntentExecutor>,
    fallback: ActionIntent,
    matrix: ActionMatrix,
    resume_now: bool,
    events: Vec<TraceEvent>,
    resumes: usize,
}

impl Default for ProgramDriver {
    fn default() -> Self {
        ProgramDriver {
            execution: None,
            current: None,
            fallback: ActionIntent::Stop,
            matrix: ActionMatrix::default(),
            resume_now: false,
            events: Vec::new(),
            resumes: 0,
        }
    }
}

impl ProgramDriver {
    /// Driver without a program. The vehicle holds its speed and lane.
    pub fn idle() -> Self {
        Self::default()
    }

    pub fn new(program: Arc<Program>) -> Self {
        let mut d = Self::default();
        d.load(program);
        d
    }

    pub fn with_fallback(mut self, fallback: ActionIntent) -> Self {
        self.fallback = fallback;
        self
    }

    /// Replaces the program. The first yield of the new one takes over on the next tick.
    pub fn load(&mut self, program: Arc<Program>) {
        self.execution = Some(start_execution(program));
        self.resume_now = true;
    }

    pub fn set_matrix(&mut self, matrix: ActionMatrix) {
        self.matrix = matrix;
    }

    pub fn matrix(&self) -> &ActionMatrix {
        &self.matrix
    }

    pub fn active_intent(&self) -> Option<ActionIntent> {
        self.current.as_ref().map(|c| c.intent())
    }

    pub fn current(&self) -> Option<&IntentExecutor> {
        self.current.as_ref()
    }

    pub fn resumes(&self) -> usize {
        self.resumes
    }

    pub fn execution(&self) -> Option<&Execution> {
        self.execution.as_ref()
    }

    /// Events produced since the last call.
    pub fn take_events(&mut self) -> Vec<TraceEvent> {
        std::mem::take(&mut self.events)
    }

    fn running(&self) -> bool {
        self.execution.as_ref().is_some_and(|e| !e.is_finished() && !e.is_faulted())
    }

    pub fn control(&mut self, world: &WorldState, ego: VehicleId) -> Result<Control, SimError> {
        let idle = self.current.as_ref().is_none_or(|c| c.status() != IntentStatus::Active);
        if (idle || self.resume_now) && self.running() {
            self.resume_now = false;
            let snap = sensor_snapshot(world, ego)?;
            let exec = self.execution.as_mut().expect("running implies execution");
            self.resumes += 1;
            match exec.resume(&snap) {
                ResumeResult::Yielded(intent) => {
                    self.events.push(TraceEvent::Intent { description: intent.to_string() });
                    self.current = Some(IntentExecutor::new(intent, world, ego)?);
                }
                ResumeResult::Finished => {}
                ResumeResult::Faulted(reason) => {
                    self.events.push(TraceEvent::Fault { reason });
                    self.events.push(TraceEvent::Intent { description: self.fallback.to_string() });
                    self.current = Some(IntentExecutor::new(self.fallback, world, ego)?);
                }
            }
        }
        if self.current.is_none() {
            let v = world.vehicle(ego)?.speed;
            self.current = Some(IntentExecutor::new(ActionIntent::Proceed { speed: v }, world, ego)?);
        }
        self.current.as_mut().expect("set above").step(world, ego, &self.matrix)
    }
}

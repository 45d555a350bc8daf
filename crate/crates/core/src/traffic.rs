//! Background-driver behavior and the instruction-blind baseline agents.
//!
//! Longitudinal control follows the Intelligent Driver Model; lane changes
//! are triggered by MOBIL and executed as a 2 s half-cosine lateral maneuver
//! tracked by the lateral MPC.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::control::{mpc_steering, LanePlan, MpcConfig, MpcWeights};
use crate::sim::{
    follower_in_lane, lead_in_lane, Control, Direction, SimError, VehicleId, VehicleState, WorldState,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    pub desired_speed: f64,
    pub time_headway: f64,
    pub min_gap: f64,
    pub max_accel: f64,
    pub comfort_decel: f64,
    pub exponent: f64,
}

impl IdmParams {
    pub fn for_speed_limit(limit: f64) -> Self {
        IdmParams {
            desired_speed: limit,
            time_headway: 1.5,
            min_gap: 2.0,
            max_accel: 1.5,
            comfort_decel: 2.0,
            exponent: 4.0,
        }
    }

    /// Uniform +-`width` relative jitter on every parameter except the exponent.
    pub fn jittered<R: Rng>(&self, rng: &mut R, width: f64) -> Self {
        let mut j = |x: f64| x * (1.0 + rng.gen_range(-width..=width));
        IdmParams {
            desired_speed: j(self.desired_speed),
            time_headway: j(self.time_headway),
            min_gap: j(self.min_gap),
            max_accel: j(self.max_accel),
            comfort_decel: j(self.comfort_decel),
            exponent: self.exponent,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.desired_speed, self.time_headway, self.min_gap, self.max_accel, self.comfort_decel]
            .iter()
            .all(|x| x.is_finite() && *x > 0.0)
            && self.exponent >= 1.0
    }

    /// Lower acceleration bound applied to every IDM output.
    pub fn emergency_decel(&self) -> f64 {
        2.0 * self.comfort_decel
    }
}

/// Leading vehicle as seen by a follower: bumper gap and speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lead {
    pub gap: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdmAccel {
    pub value: f64,
    /// Gap was non-positive; `value` is the emergency braking bound.
    pub emergency: bool,
}

/// IDM acceleration. `lead = None` means a free road.
pub fn idm_acceleration(v: f64, lead: Option<Lead>, p: &IdmParams) -> IdmAccel {
    let floor = -p.emergency_decel();
    let free = p.max_accel * (1.0 - (v / p.desired_speed).powf(p.exponent));
    let Some(lead) = lead else {
        return IdmAccel { value: free.max(floor), emergency: false };
    };
    if !(lead.gap > 0.0) {
        return IdmAccel { value: floor, emergency: true };
    }
    let dv = v - lead.speed;
    let dynamic = v * p.time_headway + v * dv / (2.0 * (p.max_accel * p.comfort_decel).sqrt());
    let desired_gap = p.min_gap + dynamic.max(0.0);
    let value = free - p.max_accel * (desired_gap / lead.gap).powi(2);
    IdmAccel { value: value.max(floor), emergency: false }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MobilParams {
    pub politeness: f64,
    pub accel_gain_threshold: f64,
    pub safe_decel: f64,
}

impl Default for MobilParams {
    fn default() -> Self {
        MobilParams { politeness: 0.3, accel_gain_threshold: 0.2, safe_decel: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneDecision {
    Keep,
    Left,
    Right,
}

/// Neighborhood of one lane relative to the ego: its leader and follower.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LaneView {
    pub lead: Option<Lead>,
    /// Follower bumper gap to the ego and follower speed.
    pub follower: Option<Lead>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilInput {
    pub ego_speed: f64,
    pub ego_length: f64,
    pub ego_params: IdmParams,
    /// Parameters assumed for the surrounding drivers.
    pub others: IdmParams,
    pub current: LaneView,
    pub left: Option<LaneView>,
    pub right: Option<LaneView>,
}

fn merged_gap(front: Option<Lead>, behind_gap: f64, ego_length: f64) -> Option<Lead> {
    front.map(|l| Lead { gap: behind_gap + ego_length + l.gap, speed: l.speed })
}

/// Incentive for changing into `target`, or `None` when the change is unsafe.
fn mobil_incentive(input: &MobilInput, target: &LaneView, params: &MobilParams) -> Option<f64> {
    let v = input.ego_speed;
    if target.lead.is_some_and(|l| l.gap <= 0.0) || target.follower.is_some_and(|f| f.gap <= 0.0) {
        return None;
    }
    let a_c = idm_acceleration(v, input.current.lead, &input.ego_params).value;
    let a_c_new = idm_acceleration(v, target.lead, &input.ego_params).value;

    let (new_follower_gain, safe) = match target.follower {
        Some(f) => {
            let before = idm_acceleration(
                f.speed,
                merged_gap(target.lead, f.gap, input.ego_length),
                &input.others,
            )
            .value;
            let after = idm_acceleration(f.speed, Some(Lead { gap: f.gap, speed: v }), &input.others);
            (after.value - before, !after.emergency && after.value >= -params.safe_decel)
        }
        None => (0.0, true),
    };
    if !safe {
        return None;
    }
    let old_follower_gain = match input.current.follower {
        Some(f) => {
            let before = idm_acceleration(f.speed, Some(Lead { gap: f.gap, speed: v }), &input.others).value;
            let after = idm_acceleration(
                f.speed,
                merged_gap(input.current.lead, f.gap, input.ego_length),
                &input.others,
            )
            .value;
            after - before
        }
        None => 0.0,
    };
    Some(a_c_new - a_c + params.politeness * (new_follower_gain + old_follower_gain))
}

/// MOBIL lane-change decision. Ties between sides favor left.
pub fn mobil_decide(input: &MobilInput, params: &MobilParams) -> LaneDecision {
    let score = |side: &Option<LaneView>| {
        side.as_ref()
            .and_then(|view| mobil_incentive(input, view, params))
            .filter(|gain| *gain > params.accel_gain_threshold)
    };
    match (score(&input.left), score(&input.right)) {
        (Some(l), Some(r)) if r > l => LaneDecision::Right,
        (Some(_), _) => LaneDecision::Left,
        (None, Some(_)) => LaneDecision::Right,
        (None, None) => LaneDecision::Keep,
    }
}

fn lane_view(world: &WorldState, ego: &VehicleState, lane: usize) -> LaneView {
    LaneView {
        lead: lead_in_lane(world, ego, lane).map(|(l, gap)| Lead { gap, speed: l.speed }),
        follower: follower_in_lane(world, ego, lane).map(|(f, gap)| Lead { gap, speed: f.speed }),
    }
}

/// Builds the MOBIL observation for `ego` from the world.
pub fn mobil_observation(world: &WorldState, ego: &VehicleState, ego_params: IdmParams) -> Result<MobilInput, SimError> {
    let seg = world.road.segment(ego.segment)?;
    let lane = ego.lane_index;
    Ok(MobilInput {
        ego_speed: ego.speed,
        ego_length: ego.length,
        ego_params,
        others: IdmParams::for_speed_limit(seg.speed_limit),
        current: lane_view(world, ego, lane),
        left: (lane > 0).then(|| lane_view(world, ego, lane - 1)),
        right: (lane + 1 < seg.lane_count).then(|| lane_view(world, ego, lane + 1)),
    })
}

pub const LANE_CHANGE_DURATION: f64 = 2.0;
const LANE_CHANGE_COOLDOWN: f64 = 4.0;

/// Lane-keeping weights used by every rule-based driver.
pub const RULE_BASED_MPC: MpcWeights = MpcWeights { lateral: 1.0, heading: 2.0, steering: 1.0 };

/// A rule-based driver: IDM along its lane, optional MOBIL lane changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleDriver {
    pub idm: IdmParams,
    pub mobil: Option<MobilParams>,
    #[serde(skip)]
    plan: Option<(LanePlan, usize)>,
    #[serde(skip)]
    last_change: Option<f64>,
}

impl RuleDriver {
    pub fn new(idm: IdmParams, mobil: Option<MobilParams>) -> Self {
        RuleDriver { idm, mobil, plan: None, last_change: None }
    }

    pub fn changing_lanes(&self) -> bool {
        self.plan.as_ref().is_some_and(|(p, _)| p.is_change())
    }

    /// Control for `id` in the current world. Deterministic in (self, world).
    pub fn control(&mut self, world: &WorldState, id: VehicleId) -> Result<Control, SimError> {
        let me = world.vehicle(id)?.clone();
        let seg = world.road.segment(me.segment)?.clone();
        let lw = world.road.lane_width;
        let (s, _) = seg.to_local(me.position);

        if let Some((plan, _)) = &self.plan {
            if plan.segment.id != seg.id || plan.finished_at(s) {
                self.plan = None;
            }
        }
        if self.plan.is_none() {
            let mut target = me.lane_index;
            let cooled = self.last_change.is_none_or(|t| world.time - t >= LANE_CHANGE_COOLDOWN);
            if let (Some(mobil), true) = (self.mobil, cooled) {
                let obs = mobil_observation(world, &me, self.idm)?;
                match mobil_decide(&obs, &mobil) {
                    LaneDecision::Left => target = me.lane_index - 1,
                    LaneDecision::Right => target = me.lane_index + 1,
                    LaneDecision::Keep => {}
                }
            }
            let from = seg.lane_offset(me.lane_index, lw);
            let plan = if target != me.lane_index {
                self.last_change = Some(world.time);
                let length = (me.speed * LANE_CHANGE_DURATION).max(10.0);
                LanePlan::change(&seg, from, seg.lane_offset(target, lw), s, length)
            } else {
                LanePlan::keep(&seg, from)
            };
            self.plan = Some((plan, target));
        }
        let (plan, target) = self.plan.as_ref().expect("plan set above");

        // brake for whatever is ahead in either lane touched by the maneuver
        let mut accel = idm_acceleration(
            me.speed,
            lead_in_lane(world, &me, me.lane_index).map(|(l, gap)| Lead { gap, speed: l.speed }),
            &self.idm,
        )
        .value;
        if *target != me.lane_index {
            let other = idm_acceleration(
                me.speed,
                lead_in_lane(world, &me, *target).map(|(l, gap)| Lead { gap, speed: l.speed }),
                &self.idm,
            )
            .value;
            accel = accel.min(other);
        }

        let cfg = MpcConfig {
            dt: world.dynamics.dt,
            wheelbase: world.dynamics.wheelbase,
            max_steer: world.dynamics.max_steer,
            ..MpcConfig::default()
        };
        let err = plan.error(me.position, me.heading, me.speed);
        let steer = mpc_steering(&err, &cfg, &RULE_BASED_MPC)
            .map_err(|e| SimError::Config(e.to_string()))?;
        Ok(Control::new(accel, steer))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Idm,
    Mobil,
}

impl BaselineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::Idm => "idm",
            BaselineKind::Mobil => "mobil",
        }
    }
}

/// Instruction-blind ego agent. It only ever sees the world, never the
/// scenario instruction.
#[derive(Debug, Clone)]
pub struct BaselineAgent {
    pub kind: BaselineKind,
    driver: RuleDriver,
}

impl BaselineAgent {
    pub fn new(kind: BaselineKind, speed_limit: f64) -> Self {
        let mobil = match kind {
            BaselineKind::Idm => None,
            BaselineKind::Mobil => Some(MobilParams::default()),
        };
        BaselineAgent { kind, driver: RuleDriver::new(IdmParams::for_speed_limit(speed_limit), mobil) }
    }

    pub fn control(&mut self, world: &WorldState, ego: VehicleId) -> Result<Control, SimError> {
        // desired speed follows the posted limit of the current segment
        let seg = world.road.segment(world.vehicle(ego)?.segment)?;
        self.driver.idm.desired_speed = seg.speed_limit;
        self.driver.control(world, ego)
    }
}

/// Convenience for callers that need to name a side.
pub fn decision_direction(d: LaneDecision) -> Option<Direction> {
    match d {
        LaneDecision::Keep => None,
        LaneDecision::Left => Some(Direction::Left),
        LaneDecision::Right => Some(Direction::Right),
    }
}

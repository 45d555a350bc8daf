//! Deterministic fixed-step world simulator.
//!
//! Vehicles follow a kinematic bicycle model on a network of straight
//! multi-lane segments with at most one intersection. Collisions are
//! oriented-rectangle overlaps with zero margin.

mod geometry;
mod road;
mod sensor;
mod trace;

pub use geometry::{wrap_angle, OrientedRect, Vec2};
pub use road::{
    Direction, Intersection, RoadNetwork, Segment, SegmentId, SignalCycle, DEFAULT_LANE_WIDTH,
};
pub use sensor::{
    describe_scene, lane_clear, sensor_snapshot, ContextSnapshot, FrontVehicle, TrafficDensity,
    Weather,
};
pub(crate) use sensor::{follower_in_lane, lead_in_lane};
pub use trace::{RunTrace, TraceEvent, TraceFrame, TraceHeader, VehicleSample};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("dynamics error: {0}")]
    Dynamics(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown vehicle {0}")]
    UnknownVehicle(VehicleId),
    #[error("unknown segment {}", .0 .0)]
    UnknownSegment(SegmentId),
    #[error("invalid road network: {0}")]
    InvalidRoad(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u32);

impl std::fmt::Display for VehicleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Ego,
    Background,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: VehicleId,
    pub position: Vec2,
    pub heading: f64,
    pub speed: f64,
    pub lane_index: usize,
    pub segment: SegmentId,
    pub length: f64,
    pub width: f64,
    pub role: Role,
}

impl VehicleState {
    pub fn velocity(&self) -> Vec2 {
        Vec2::from_heading(self.heading) * self.speed
    }

    pub fn footprint(&self) -> OrientedRect {
        OrientedRect {
            center: self.position,
            heading: self.heading,
            half_length: self.length / 2.0,
            half_width: self.width / 2.0,
        }
    }
}

/// Longitudinal acceleration and front-wheel steering angle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Control {
    pub accel: f64,
    pub steer: f64,
}

impl Control {
    pub const fn new(accel: f64, steer: f64) -> Self {
        Self { accel, steer }
    }
}

pub type Controls = BTreeMap<VehicleId, Control>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    pub dt: f64,
    pub wheelbase: f64,
    pub max_speed: f64,
    pub max_steer: f64,
    pub sensing_range: f64,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        Self { dt: 0.1, wheelbase: 2.5, max_speed: 40.0, max_steer: 0.6, sensing_range: 100.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Conditions {
    pub weather: Weather,
    pub traffic_density: TrafficDensity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub road: RoadNetwork,
    pub vehicles: Vec<VehicleState>,
    pub time: f64,
    pub tick: u64,
    pub seed: u64,
    #[serde(default)]
    pub dynamics: DynamicsParams,
    #[serde(default)]
    pub conditions: Conditions,
}

/// Two vehicles overlapping at `time`. `ids` are sorted ascending.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub time: f64,
    pub ids: (VehicleId, VehicleId),
    pub relative_speed: f64,
}

impl CollisionEvent {
    pub fn involves(&self, id: VehicleId) -> bool {
        self.ids.0 == id || self.ids.1 == id
    }
}

/// One explicit-Euler step of the kinematic bicycle model.
pub fn advance_vehicle(
    state: &VehicleState,
    control: Control,
    params: &DynamicsParams,
) -> Result<VehicleState, SimError> {
    let dt = params.dt;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(SimError::Dynamics(format!("time step must be positive, got {dt}")));
    }
    if !control.accel.is_finite() || !control.steer.is_finite() {
        return Err(SimError::Dynamics(format!(
            "non-finite control for {}: accel={}, steer={}",
            state.id, control.accel, control.steer
        )));
    }
    if !state.position.is_finite() || !state.heading.is_finite() || !state.speed.is_finite() {
        return Err(SimError::Dynamics(format!("non-finite state for {}", state.id)));
    }
    if control.steer.abs() > params.max_steer + 1e-12 {
        return Err(SimError::Dynamics(format!(
            "steering {} exceeds limit {} for {}",
            control.steer, params.max_steer, state.id
        )));
    }
    let v = state.speed;
    let mut next = state.clone();
    next.position = Vec2::new(
        state.position.x + v * state.heading.cos() * dt,
        state.position.y + v * state.heading.sin() * dt,
    );
    next.heading = wrap_angle(state.heading + v / params.wheelbase * control.steer.tan() * dt);
    next.speed = (v + control.accel * dt).clamp(0.0, params.max_speed);
    Ok(next)
}

impl WorldState {
    pub fn new(road: RoadNetwork, vehicles: Vec<VehicleState>, seed: u64) -> Result<Self, SimError> {
        road.validate()?;
        let world = WorldState {
            road,
            vehicles,
            time: 0.0,
            tick: 0,
            seed,
            dynamics: DynamicsParams::default(),
            conditions: Conditions::default(),
        };
        world.validate()?;
        Ok(world)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let mut seen = std::collections::BTreeSet::new();
        for v in &self.vehicles {
            if !seen.insert(v.id) {
                return Err(SimError::Config(format!("duplicate vehicle id {}", v.id)));
            }
            let seg = self.road.segment(v.segment)?;
            if v.lane_index >= seg.lane_count {
                return Err(SimError::Config(format!(
                    "{} references lane {} but segment {} has {} lanes",
                    v.id, v.lane_index, seg.id.0, seg.lane_count
                )));
            }
            if !(v.length > 0.0 && v.width > 0.0) {
                return Err(SimError::Config(format!("{} has non-positive dimensions", v.id)));
            }
            if !(0.0..=self.dynamics.max_speed).contains(&v.speed) {
                return Err(SimError::Config(format!("{} speed {} out of range", v.id, v.speed)));
            }
        }
        Ok(())
    }

    pub fn vehicle(&self, id: VehicleId) -> Result<&VehicleState, SimError> {
        self.vehicles.iter().find(|v| v.id == id).ok_or(SimError::UnknownVehicle(id))
    }

    pub fn ego(&self) -> Option<&VehicleState> {
        self.vehicles.iter().find(|v| v.role == Role::Ego)
    }

    /// Advances every vehicle by one tick and reports overlapping pairs.
    pub fn step(&mut self, controls: &Controls) -> Result<Vec<CollisionEvent>, SimError> {
        for id in controls.keys() {
            if !self.vehicles.iter().any(|v| v.id == *id) {
                return Err(SimError::Config(format!("control supplied for unknown vehicle {id}")));
            }
        }
        let mut next = Vec::with_capacity(self.vehicles.len());
        for v in &self.vehicles {
            let control = controls
                .get(&v.id)
                .ok_or_else(|| SimError::Config(format!("missing control for {}", v.id)))?;
            let mut moved = advance_vehicle(v, *control, &self.dynamics)?;
            moved.segment = self.road.locate(moved.position, v.segment);
            let seg = self.road.segment(moved.segment)?;
            let (_, lateral) = seg.to_local(moved.position);
            moved.lane_index = seg.nearest_lane(lateral, self.road.lane_width);
            next.push(moved);
        }
        self.vehicles = next;
        self.tick += 1;
        self.time = self.tick as f64 * self.dynamics.dt;
        Ok(self.collisions())
    }

    /// All overlapping vehicle pairs at the current instant.
    pub fn collisions(&self) -> Vec<CollisionEvent> {
        let mut events = Vec::new();
        for (i, a) in self.vehicles.iter().enumerate() {
            let fa = a.footprint();
            for b in &self.vehicles[i + 1..] {
                // cheap bounding-circle reject first
                let reach = (a.length + b.length) / 2.0 + (a.width + b.width) / 2.0;
                if (a.position - b.position).norm_sq() > reach * reach {
                    continue;
                }
                if fa.overlaps(&b.footprint()) {
                    let ids = if a.id < b.id { (a.id, b.id) } else { (b.id, a.id) };
                    events.push(CollisionEvent {
                        time: self.time,
                        ids,
                        relative_speed: (a.velocity() - b.velocity()).norm(),
                    });
                }
            }
        }
        events.sort_by_key(|e| e.ids);
        events
    }
}

/// Functional form of [`WorldState::step`].
pub fn step_world(
    world: &WorldState,
    controls: &Controls,
) -> Result<(WorldState, Vec<CollisionEvent>), SimError> {
    let mut next = world.clone();
    let events = next.step(controls)?;
    Ok((next, events))
}

/// Standard passenger car footprint.
pub const CAR_LENGTH: f64 = 4.8;
pub const CAR_WIDTH: f64 = 1.9;

/// Builds a vehicle centered on `lane` at arc length `s` of `segment`, aligned with it.
pub fn place_vehicle(
    road: &RoadNetwork,
    id: VehicleId,
    segment: SegmentId,
    lane: usize,
    s: f64,
    speed: f64,
    role: Role,
) -> Result<VehicleState, SimError> {
    let seg = road.segment(segment)?;
    if lane >= seg.lane_count {
        return Err(SimError::Config(format!("lane {lane} does not exist on segment {}", segment.0)));
    }
    Ok(VehicleState {
        id,
        position: seg.lane_point(s, lane, road.lane_width),
        heading: seg.heading,
        speed,
        lane_index: lane,
        segment,
        length: CAR_LENGTH,
        width: CAR_WIDTH,
        role,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn car(id: u32, x: f64, lane: usize, speed: f64) -> VehicleState {
        let road = RoadNetwork::highway(3, 2000.0, 30.0);
        let mut v = place_vehicle(&road, VehicleId(id), SegmentId(0), lane, x, speed, Role::Background)
            .unwrap();
        if id == 0 {
            v.role = Role::Ego;
        }
        v
    }

    #[test]
    fn straight_line_step() {
        let v = car(0, 0.0, 2, 10.0);
        let next = advance_vehicle(&v, Control::new(0.0, 0.0), &DynamicsParams::default()).unwrap();
        assert_eq!(next.position.x, 1.0);
        assert_eq!(next.heading, 0.0);
    }

    #[test]
    fn speed_clamped_at_zero() {
        let v = car(0, 0.0, 2, 0.0);
        let next = advance_vehicle(&v, Control::new(-1.0, 0.0), &DynamicsParams::default()).unwrap();
        assert_eq!(next.speed, 0.0);
        assert_eq!(next.position, v.position);
    }

    #[test]
    fn heading_rate_matches_bicycle_law() {
        let v = car(0, 0.0, 2, 10.0);
        let next = advance_vehicle(&v, Control::new(0.0, 0.1), &DynamicsParams::default()).unwrap();
        let expected = 10.0 / 2.5 * 0.1f64.tan() * 0.1;
        assert!((next.heading - expected).abs() < 1e-15);
        assert!((next.heading - 0.04013).abs() < 1e-5);
    }

    #[test]
    fn non_finite_control_rejected() {
        let v = car(0, 0.0, 2, 10.0);
        let err = advance_vehicle(&v, Control::new(f64::NAN, 0.0), &DynamicsParams::default());
        assert!(matches!(err, Err(SimError::Dynamics(_))));
    }

    #[test]
    fn missing_control_is_config_error() {
        let road = RoadNetwork::highway(3, 2000.0, 30.0);
        let mut w = WorldState::new(road, vec![car(0, 0.0, 2, 10.0), car(1, 50.0, 2, 10.0)], 1).unwrap();
        let mut controls = Controls::new();
        controls.insert(VehicleId(0), Control::default());
        assert!(matches!(w.step(&controls), Err(SimError::Config(_))));
    }

    #[test]
    fn parallel_lanes_do_not_collide() {
        let road = RoadNetwork::highway(3, 2000.0, 30.0);
        let mut w = WorldState::new(road, vec![car(0, 0.0, 2, 10.0), car(1, 100.0, 1, 10.0)], 1).unwrap();
        let controls: Controls = w.vehicles.iter().map(|v| (v.id, Control::default())).collect();
        for _ in 0..100 {
            assert!(w.step(&controls).unwrap().is_empty());
        }
    }

    #[test]
    fn proceeding_into_stationary_car_collides() {
        let road = RoadNetwork::highway(3, 2000.0, 30.0);
        // 6.8 m bumper-to-bumper gap
        let lead_x = 6.8 + CAR_LENGTH;
        let mut w =
            WorldState::new(road, vec![car(0, 0.0, 2, 0.0), car(1, lead_x, 2, 0.0)], 1).unwrap();
        let mut controls = Controls::new();
        controls.insert(VehicleId(0), Control::new(2.0, 0.0));
        controls.insert(VehicleId(1), Control::default());
        let mut hit = None;
        for _ in 0..100 {
            let ev = w.step(&controls).unwrap();
            if let Some(e) = ev.first() {
                hit = Some(*e);
                break;
            }
        }
        let e = hit.expect("collision expected");
        assert_eq!(e.ids, (VehicleId(0), VehicleId(1)));
        assert!(e.relative_speed > 0.0);
    }

    #[test]
    fn time_tracks_tick() {
        let road = RoadNetwork::highway(3, 2000.0, 30.0);
        let mut w = WorldState::new(road, vec![car(0, 0.0, 2, 10.0)], 1).unwrap();
        let controls: Controls = [(VehicleId(0), Control::default())].into_iter().collect();
        for _ in 0..1000 {
            w.step(&controls).unwrap();
        }
        assert!((w.time - w.tick as f64 * 0.1).abs() < 1e-9);
        assert_eq!(w.tick, 1000);
    }
}

use serde::{Deserialize, Serialize};
use std::fmt;

use super::{Direction, SimError, VehicleId, VehicleState, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weather {
    #[default]
    Sunny,
    Rain,
    Fog,
    Snow,
    Night,
}

impl Weather {
    pub const ALL: [Weather; 5] = [Weather::Sunny, Weather::Rain, Weather::Fog, Weather::Snow, Weather::Night];

    pub fn as_str(self) -> &'static str {
        match self {
            Weather::Sunny => "sunny",
            Weather::Rain => "rain",
            Weather::Fog => "fog",
            Weather::Snow => "snow",
            Weather::Night => "night",
        }
    }

    pub fn is_adverse(self) -> bool {
        self != Weather::Sunny
    }
}

impl fmt::Display for Weather {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficDensity {
    Light,
    #[default]
    Moderate,
    Heavy,
}

impl TrafficDensity {
    pub fn as_str(self) -> &'static str {
        match self {
            TrafficDensity::Light => "light",
            TrafficDensity::Moderate => "moderate",
            TrafficDensity::Heavy => "heavy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontVehicle {
    pub id: VehicleId,
    /// Bumper-to-bumper gap in meters.
    pub distance: f64,
    pub speed: f64,
    pub bearing_deg: f64,
    pub relative_heading_deg: f64,
}

/// What the ego can observe about its surroundings at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSnapshot {
    pub time: f64,
    pub ego_speed: f64,
    pub front_vehicle: Option<FrontVehicle>,
    pub lane_index: usize,
    pub lane_count: usize,
    pub speed_limit: f64,
    pub at_intersection: bool,
    #[serde(default)]
    pub intersection_exits: Vec<Direction>,
    pub weather: Weather,
    pub traffic_density: TrafficDensity,
    #[serde(default)]
    pub left_lane_clear: bool,
    #[serde(default)]
    pub right_lane_clear: bool,
}

impl ContextSnapshot {
    /// Snapshot of a lone vehicle on an open road; handy for tests and tooling.
    pub fn open_road(ego_speed: f64, lane_index: usize, lane_count: usize, speed_limit: f64) -> Self {
        ContextSnapshot {
            time: 0.0,
            ego_speed,
            front_vehicle: None,
            lane_index,
            lane_count,
            speed_limit,
            at_intersection: false,
            intersection_exits: Vec::new(),
            weather: Weather::Sunny,
            traffic_density: TrafficDensity::Light,
            left_lane_clear: lane_index > 0,
            right_lane_clear: lane_index + 1 < lane_count,
        }
    }

    pub fn is_leftmost(&self) -> bool {
        self.lane_index == 0
    }

    pub fn is_rightmost(&self) -> bool {
        self.lane_index + 1 >= self.lane_count
    }
}

/// Lateral band within which another vehicle is treated as occupying a lane.
const LANE_OCCUPANCY: f64 = 0.75;

/// Whether `other` drives along `seg` and overlaps the lane at `lane_offset`.
/// Vehicles on a colinear continuation of the segment count as well.
fn occupies(world: &WorldState, seg: &super::Segment, other: &VehicleState, lane_offset: f64) -> bool {
    if super::wrap_angle(other.heading - seg.heading).abs() > 0.6 {
        return false;
    }
    let (_, d) = seg.to_local(other.position);
    (d - lane_offset).abs() < world.road.lane_width * LANE_OCCUPANCY
}

/// Nearest vehicle ahead in `lane` of the ego's segment, as (vehicle, bumper gap).
pub(crate) fn lead_in_lane<'a>(
    world: &'a WorldState,
    ego: &VehicleState,
    lane: usize,
) -> Option<(&'a VehicleState, f64)> {
    let seg = world.road.segment(ego.segment).ok()?;
    let (s_ego, _) = seg.to_local(ego.position);
    let offset = seg.lane_offset(lane, world.road.lane_width);
    world
        .vehicles
        .iter()
        .filter(|o| o.id != ego.id && occupies(world, seg, o, offset))
        .filter_map(|o| {
            let (s, _) = seg.to_local(o.position);
            (s > s_ego).then(|| (o, (s - s_ego) - (o.length + ego.length) / 2.0))
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

/// Nearest vehicle behind in `lane` of the ego's segment, as (vehicle, bumper gap).
pub(crate) fn follower_in_lane<'a>(
    world: &'a WorldState,
    ego: &VehicleState,
    lane: usize,
) -> Option<(&'a VehicleState, f64)> {
    let seg = world.road.segment(ego.segment).ok()?;
    let (s_ego, _) = seg.to_local(ego.position);
    let offset = seg.lane_offset(lane, world.road.lane_width);
    world
        .vehicles
        .iter()
        .filter(|o| o.id != ego.id && occupies(world, seg, o, offset))
        .filter_map(|o| {
            let (s, _) = seg.to_local(o.position);
            (s <= s_ego).then(|| (o, (s_ego - s) - (o.length + ego.length) / 2.0))
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

/// Whether the adjacent lane on `side` exists and has room for a lane change.
pub fn lane_clear(world: &WorldState, ego_id: VehicleId, side: Direction) -> Result<bool, SimError> {
    let ego = world.vehicle(ego_id)?;
    let seg = world.road.segment(ego.segment)?;
    let target = match side {
        Direction::Left if ego.lane_index > 0 => ego.lane_index - 1,
        Direction::Right if ego.lane_index + 1 < seg.lane_count => ego.lane_index + 1,
        _ => return Ok(false),
    };
    let v = ego.speed;
    if let Some((lead, gap)) = lead_in_lane(world, ego, target) {
        let need = (0.8 * v + 3.0 * (v - lead.speed).max(0.0)).max(8.0);
        if gap < need {
            return Ok(false);
        }
    }
    if let Some((rear, gap)) = follower_in_lane(world, ego, target) {
        let need = (1.0 * rear.speed + 3.0 * (rear.speed - v).max(0.0)).max(12.0);
        if gap < need {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Observes the world from the ego's perspective.
pub fn sensor_snapshot(world: &WorldState, ego_id: VehicleId) -> Result<ContextSnapshot, SimError> {
    let ego = world.vehicle(ego_id)?;
    let seg = world.road.segment(ego.segment)?;
    let range = world.dynamics.sensing_range;
    let front_vehicle = lead_in_lane(world, ego, ego.lane_index)
        .filter(|(_, gap)| *gap <= range)
        .map(|(lead, gap)| {
            let rel = lead.position - ego.position;
            FrontVehicle {
                id: lead.id,
                distance: gap.max(0.01),
                speed: lead.speed,
                bearing_deg: super::wrap_angle(rel.angle() - ego.heading).to_degrees(),
                relative_heading_deg: super::wrap_angle(lead.heading - ego.heading).to_degrees(),
            }
        });

    let (at_intersection, intersection_exits) = match &world.road.intersection {
        Some(ix) if ix.approach == ego.segment => {
            let (s, _) = seg.to_local(ego.position);
            let near = seg.length - s <= range;
            let exits = if near { ix.exits.keys().copied().collect() } else { Vec::new() };
            (near, exits)
        }
        _ => (false, Vec::new()),
    };

    Ok(ContextSnapshot {
        time: world.time,
        ego_speed: ego.speed,
        front_vehicle,
        lane_index: ego.lane_index,
        lane_count: seg.lane_count,
        speed_limit: seg.speed_limit,
        at_intersection,
        intersection_exits,
        weather: world.conditions.weather,
        traffic_density: world.conditions.traffic_density,
        left_lane_clear: lane_clear(world, ego_id, Direction::Left)?,
        right_lane_clear: lane_clear(world, ego_id, Direction::Right)?,
    })
}

fn kmh(v: f64) -> f64 {
    v * 3.6
}

/// Renders the situation descriptor: one fact per line in a fixed order.
pub fn describe_scene(snapshot: &ContextSnapshot) -> String {
    let mut lines = Vec::new();
    if let Some(front) = &snapshot.front_vehicle {
        lines.push(format!("A vehicle in front of you is running at {:.1} km/h.", kmh(front.speed)));
        lines.push(format!("It is {:.1} m ahead of you.", front.distance));
    }
    lines.push(format!("Your current speed is {:.1} km/h.", kmh(snapshot.ego_speed)));
    lines.push(format!("The speed limit is {:.1} km/h.", kmh(snapshot.speed_limit)));
    lines.push(format!("The weather is {}.", snapshot.weather));
    let position = if snapshot.lane_count == 1 {
        "You are driving on a single-lane road.".to_string()
    } else if snapshot.is_leftmost() {
        format!("You are in the leftmost lane of a {}-lane road.", snapshot.lane_count)
    } else if snapshot.is_rightmost() {
        format!("You are in the rightmost lane of a {}-lane road.", snapshot.lane_count)
    } else {
        format!(
            "You are in lane {} of {}, counting from the left.",
            snapshot.lane_index + 1,
            snapshot.lane_count
        )
    };
    lines.push(position);
    if snapshot.at_intersection {
        let exits: Vec<&str> = snapshot.intersection_exits.iter().map(|d| d.as_str()).collect();
        lines.push(format!("You are approaching an intersection with exits: {}.", exits.join(", ")));
    }
    lines.push(format!("Traffic is {}.", snapshot.traffic_density.as_str()));
    lines.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{place_vehicle, RoadNetwork, Role, SegmentId, CAR_LENGTH};

    fn world(vs: Vec<(u32, usize, f64, f64)>) -> WorldState {
        let road = RoadNetwork::highway(3, 2000.0, 30.0);
        let vehicles = vs
            .into_iter()
            .map(|(id, lane, s, v)| {
                let role = if id == 0 { Role::Ego } else { Role::Background };
                place_vehicle(&road, VehicleId(id), SegmentId(0), lane, s, v, role).unwrap()
            })
            .collect();
        WorldState::new(road, vehicles, 7).unwrap()
    }

    #[test]
    fn lone_ego_has_no_front_vehicle() {
        let w = world(vec![(0, 1, 100.0, 20.0)]);
        let snap = sensor_snapshot(&w, VehicleId(0)).unwrap();
        assert!(snap.front_vehicle.is_none());
        assert!(snap.left_lane_clear && snap.right_lane_clear);
    }

    #[test]
    fn lead_reported_bumper_to_bumper() {
        let w = world(vec![(0, 1, 100.0, 20.0), (1, 1, 100.0 + 50.0 + CAR_LENGTH, 10.0)]);
        let snap = sensor_snapshot(&w, VehicleId(0)).unwrap();
        let f = snap.front_vehicle.unwrap();
        assert!((f.distance - 50.0).abs() < 1e-9);
        assert_eq!(f.speed, 10.0);
        assert_eq!(f.relative_heading_deg, 0.0);
    }

    #[test]
    fn adjacent_lane_lead_is_ignored() {
        let w = world(vec![(0, 1, 100.0, 20.0), (1, 0, 150.0, 10.0)]);
        let snap = sensor_snapshot(&w, VehicleId(0)).unwrap();
        assert!(snap.front_vehicle.is_none());
        assert!(!snap.left_lane_clear);
    }

    #[test]
    fn unknown_ego_is_lookup_error() {
        let w = world(vec![(0, 1, 100.0, 20.0)]);
        assert!(matches!(sensor_snapshot(&w, VehicleId(9)), Err(SimError::UnknownVehicle(_))));
    }

    #[test]
    fn descriptor_lines() {
        let mut snap = ContextSnapshot::open_road(40.0 / 3.6, 1, 3, 60.0 / 3.6);
        snap.front_vehicle = Some(FrontVehicle {
            id: VehicleId(1),
            distance: 20.0,
            speed: 38.0 / 3.6,
            bearing_deg: 0.0,
            relative_heading_deg: 0.0,
        });
        let text = describe_scene(&snap);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "A vehicle in front of you is running at 38.0 km/h.");
        assert!(lines.contains(&"Your current speed is 40.0 km/h."));
        assert!(lines.contains(&"The speed limit is 60.0 km/h."));
        assert!(lines.contains(&"The weather is sunny."));
    }

    #[test]
    fn descriptor_omits_missing_front_vehicle() {
        let snap = ContextSnapshot::open_road(10.0, 0, 3, 20.0);
        let text = describe_scene(&snap);
        assert!(!text.contains("vehicle in front"));
        assert!(text.starts_with("Your current speed is 36.0 km/h."));
        assert!(text.contains("leftmost lane"));
    }
}

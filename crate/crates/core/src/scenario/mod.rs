//! Benchmark scenarios: schema, seeded suite generation, goal predicates and
//! route progress.

mod generate;
pub mod templates;

pub use generate::{category_counts, generate_scenario, generate_suite, MIN_SUITE_SIZE};
pub use templates::Directness;

use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{Read, Write};
use thiserror::Error;

use crate::route::RouteSpec;
use crate::sim::{
    lead_in_lane, Direction, RunTrace, SegmentId, SimError, TraceFrame, VehicleId, VehicleState,
    WorldState,
};
use crate::traffic::IdmParams;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid scenario {id}: {reason}")]
    Invalid { id: String, reason: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("suite file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Distance,
    Speed,
    PullOver,
    Routing,
    LaneChange,
    Overtake,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Distance,
        Category::Speed,
        Category::PullOver,
        Category::Routing,
        Category::LaneChange,
        Category::Overtake,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Distance => "distance",
            Category::Speed => "speed",
            Category::PullOver => "pull_over",
            Category::Routing => "routing",
            Category::LaneChange => "lane_change",
            Category::Overtake => "overtake",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Highway,
    Intersection,
}

/// Goal predicate with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GoalKind {
    /// Bumper gap to the same-lane lead within `target ± tolerance`.
    Distance { target_gap: f64, tolerance: f64 },
    /// Ego speed inside `[min, max]`.
    Speed { min: f64, max: f64 },
    /// Stopped below `max_speed` in the rightmost lane.
    PullOver { max_speed: f64 },
    /// On the exit segment for `exit`, at least `min_progress` meters in.
    Routing { exit: Direction, min_progress: f64 },
    /// Settled in `target_lane` of the current segment.
    LaneChange { target_lane: usize, tolerance: f64 },
    /// At least `margin` meters ahead of `lead` (bumper to bumper) while in `lane`.
    Overtake { lead: VehicleId, lane: usize, margin: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalSpec {
    #[serde(flatten)]
    pub kind: GoalKind,
    /// Seconds the predicate must hold continuously.
    pub hold_duration: f64,
}

pub const SPEED_HOLD: f64 = 3.0;
pub const DISTANCE_HOLD: f64 = 3.0;
pub const PULL_OVER_HOLD: f64 = 2.0;
pub const PULL_OVER_SPEED: f64 = 0.1;
pub const OVERTAKE_MARGIN: f64 = 10.0;
pub const OVERTAKE_HOLD: f64 = 1.0;
pub const LANE_CHANGE_HOLD: f64 = 1.0;
pub const ROUTING_PROGRESS: f64 = 20.0;
pub const HIGHWAY_TIME_LIMIT: f64 = 30.0;
pub const INTERSECTION_TIME_LIMIT: f64 = 60.0;
/// Lateral distance from the route beyond which progress stops counting.
pub const OFF_ROUTE_DISTANCE: f64 = 6.0;

/// A background vehicle's driver model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSpec {
    pub id: VehicleId,
    pub idm: IdmParams,
    #[serde(default)]
    pub lane_changes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub category: Category,
    pub setting: Setting,
    pub instruction: String,
    pub directness: Directness,
    pub ego: VehicleId,
    pub initial: WorldState,
    pub background: Vec<BackgroundSpec>,
    pub goal: GoalSpec,
    pub route: RouteSpec,
    pub time_limit: f64,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |reason: String| ScenarioError::Invalid { id: self.id.clone(), reason };
        self.initial.validate()?;
        let words = templates::word_count(&self.instruction);
        if !(2..=14).contains(&words) {
            return Err(bad(format!("instruction has {words} words, expected 2 to 14")));
        }
        if self.category == Category::Routing && self.setting != Setting::Intersection {
            return Err(bad("routing scenarios need an intersection".into()));
        }
        if self.setting == Setting::Intersection && self.initial.road.intersection.is_none() {
            return Err(bad("intersection setting without an intersection".into()));
        }
        if !(self.time_limit > 0.0) {
            return Err(bad("time limit must be positive".into()));
        }
        let ego = self.initial.vehicle(self.ego)?;
        let seg = self.initial.road.segment(ego.segment)?;
        match &self.goal.kind {
            GoalKind::LaneChange { target_lane, .. } if *target_lane >= seg.lane_count => {
                return Err(bad(format!("target lane {target_lane} does not exist")));
            }
            GoalKind::Routing { exit, .. } if self.initial.road.exit(*exit).is_none() => {
                return Err(bad(format!("no {exit} exit")));
            }
            GoalKind::Overtake { lead, .. } => {
                self.initial.vehicle(*lead)?;
            }
            _ => {}
        }
        for b in &self.background {
            self.initial.vehicle(b.id)?;
            if !b.idm.is_valid() {
                return Err(bad(format!("background {} has invalid IDM parameters", b.id)));
            }
        }
        Ok(())
    }
}

/// Result of checking a trace against its scenario goal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalOutcome {
    pub completed: bool,
    /// Start of the first window over which the goal held; `None` if never.
    pub completion_time: Option<f64>,
}

/// Vehicle states at one frame, with dimensions taken from the initial world.
pub(crate) fn frame_world(initial: &WorldState, frame: &TraceFrame) -> WorldState {
    let mut w = initial.clone();
    w.vehicles = frame
        .vehicles
        .iter()
        .filter_map(|s| {
            let base = initial.vehicles.iter().find(|v| v.id == s.id)?;
            Some(VehicleState {
                position: s.position(),
                heading: s.heading,
                speed: s.speed,
                lane_index: s.lane,
                segment: s.segment,
                ..base.clone()
            })
        })
        .collect();
    w.tick = frame.tick;
    w.time = frame.time;
    w
}

/// Whether the goal predicate holds at one instant.
pub fn goal_predicate(scenario: &Scenario, world: &WorldState) -> bool {
    let Ok(ego) = world.vehicle(scenario.ego) else {
        return false;
    };
    let Ok(seg) = world.road.segment(ego.segment) else {
        return false;
    };
    let lw = world.road.lane_width;
    match &scenario.goal.kind {
        GoalKind::Distance { target_gap, tolerance } => lead_in_lane(world, ego, ego.lane_index)
            .is_some_and(|(_, gap)| (gap - target_gap).abs() <= *tolerance),
        GoalKind::Speed { min, max } => ego.speed >= *min && ego.speed <= *max,
        GoalKind::PullOver { max_speed } => {
            let (_, d) = seg.to_local(ego.position);
            ego.speed < *max_speed
                && ego.lane_index + 1 == seg.lane_count
                && (d - seg.lane_offset(ego.lane_index, lw)).abs() < lw / 2.0
        }
        GoalKind::Routing { exit, min_progress } => world.road.exit(*exit).is_some_and(|x| {
            x.id == ego.segment && seg.to_local(ego.position).0 >= *min_progress
        }),
        GoalKind::LaneChange { target_lane, tolerance } => {
            let (_, d) = seg.to_local(ego.position);
            ego.lane_index == *target_lane
                && (d - seg.lane_offset(*target_lane, lw)).abs() <= *tolerance
                && crate::sim::wrap_angle(ego.heading - seg.heading).abs() < 0.05
        }
        GoalKind::Overtake { lead, lane, margin } => {
            let Ok(l) = world.vehicle(*lead) else {
                return false;
            };
            let (s_ego, _) = seg.to_local(ego.position);
            let (s_lead, _) = seg.to_local(l.position);
            let (_, d) = seg.to_local(ego.position);
            ego.lane_index == *lane
                && (d - seg.lane_offset(*lane, lw)).abs() < lw / 4.0
                && s_ego - s_lead - (ego.length + l.length) / 2.0 >= *margin
        }
    }
}

/// Tracks a hold window frame by frame; shared by the run loop and the
/// after-the-fact trace check so both agree exactly.
#[derive(Debug, Clone, Default)]
pub struct GoalTracker {
    window_start: Option<f64>,
    done: Option<f64>,
}

impl GoalTracker {
    pub fn new() -> Self {
        GoalTracker::default()
    }

    /// Feeds one instant; returns the completion time once the hold is met.
    pub fn observe(&mut self, scenario: &Scenario, world: &WorldState) -> Option<f64> {
        if self.done.is_some() {
            return self.done;
        }
        if goal_predicate(scenario, world) {
            let start = *self.window_start.get_or_insert(world.time);
            if world.time - start >= scenario.goal.hold_duration - 1e-9 {
                self.done = Some(start);
            }
        } else {
            self.window_start = None;
        }
        self.done
    }

    pub fn completion_time(&self) -> Option<f64> {
        self.done
    }
}

/// Completion flag and time for a finished trace.
pub fn goal_satisfied(scenario: &Scenario, trace: &RunTrace) -> GoalOutcome {
    let mut tracker = GoalTracker::new();
    let mut time = None;
    for frame in &trace.frames {
        if frame.time > scenario.time_limit + 1e-9 {
            break;
        }
        let w = frame_world(&scenario.initial, frame);
        if let Some(t) = tracker.observe(scenario, &w) {
            time = Some(t);
            break;
        }
    }
    let collided = trace.ego_collided();
    GoalOutcome {
        completed: time.is_some_and(|t| t <= scenario.time_limit) && !collided,
        completion_time: time,
    }
}

/// Route completion in percent: furthest on-route arc length over the route length.
pub fn route_progress(route: &RouteSpec, trace: &RunTrace) -> f64 {
    let mut best: f64 = 0.0;
    for (_, sample) in trace.ego_samples() {
        let p = route.project(sample.position());
        if p.lateral.abs() > OFF_ROUTE_DISTANCE {
            continue;
        }
        best = best.max(p.s);
    }
    (best / route.total_length()).clamp(0.0, 1.0) * 100.0
}

/// Route of the ego lane centered on `lane` from `s0` over `length` meters.
pub(crate) fn lane_route(
    world: &WorldState,
    segment: SegmentId,
    lane: usize,
    s0: f64,
    length: f64,
) -> Result<RouteSpec, ScenarioError> {
    let seg = world.road.segment(segment)?;
    let lw = world.road.lane_width;
    RouteSpec::straight(seg.lane_point(s0, lane, lw), seg.lane_point(s0 + length, lane, lw), 5.0)
        .map_err(|e| ScenarioError::Config(e.to_string()))
}

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ScenarioDocument {
    schema_version: u32,
    #[serde(flatten)]
    scenario: Scenario,
}

/// Writes a suite as a YAML stream, one document per scenario.
pub fn write_suite<W: Write>(mut out: W, suite: &[Scenario]) -> Result<(), ScenarioError> {
    for s in suite {
        let doc = ScenarioDocument { schema_version: SCHEMA_VERSION, scenario: s.clone() };
        let text = serde_yaml::to_string(&doc).map_err(|e| ScenarioError::Format(e.to_string()))?;
        out.write_all(b"---\n")?;
        out.write_all(text.as_bytes())?;
    }
    Ok(())
}

pub fn suite_to_string(suite: &[Scenario]) -> Result<String, ScenarioError> {
    let mut buf = Vec::new();
    write_suite(&mut buf, suite)?;
    Ok(String::from_utf8(buf).expect("yaml is utf-8"))
}

pub fn read_suite<R: Read>(mut input: R) -> Result<Vec<Scenario>, ScenarioError> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    parse_suite(&text)
}

pub fn parse_suite(text: &str) -> Result<Vec<Scenario>, ScenarioError> {
    let mut out = Vec::new();
    for doc in serde_yaml::Deserializer::from_str(text) {
        let value = serde_yaml::Value::deserialize(doc).map_err(|e| ScenarioError::Format(e.to_string()))?;
        if value.is_null() {
            continue;
        }
        let version = value.get("schema_version").and_then(|v| v.as_u64());
        if version != Some(SCHEMA_VERSION as u64) {
            return Err(ScenarioError::Format(format!(
                "unsupported schema_version {version:?}, expected {SCHEMA_VERSION}"
            )));
        }
        let doc: ScenarioDocument =
            serde_yaml::from_value(value).map_err(|e| ScenarioError::Format(e.to_string()))?;
        doc.scenario.validate()?;
        out.push(doc.scenario);
    }
    Ok(out)
}

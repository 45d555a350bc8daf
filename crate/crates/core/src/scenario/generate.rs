//! Seeded suite generator.
//!
//! Category proportions follow the reference suite counts
//! (1200, 1200, 200, 1500, 400, 400 out of 4900) with largest-remainder
//! rounding. Every scenario draws from its own stream derived from the suite
//! seed, so a scenario does not depend on how many precede it.

use rand::{seq::SliceRandom, Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::templates::{self, Directness, GapTarget, SpeedTarget, Template};
use super::*;
use crate::sim::{
    place_vehicle, Conditions, Direction, RoadNetwork, Role, SegmentId, TrafficDensity,
    VehicleId, Weather, WorldState, CAR_LENGTH,
};
use crate::traffic::IdmParams;

pub const MIN_SUITE_SIZE: usize = 49;
const REFERENCE_COUNTS: [usize; 6] = [1200, 1200, 200, 1500, 400, 400];
const REFERENCE_TOTAL: usize = 4900;

const HIGHWAY_LENGTH: f64 = 2000.0;
const APPROACH_LENGTH: f64 = 150.0;
const EGO_START: f64 = 100.0;
const MIN_SPACING: f64 = 25.0;
const DRIVER_JITTER: f64 = 0.2;

/// Per-category scenario counts for a suite of `total`, in [`Category::ALL`] order.
pub fn category_counts(total: usize) -> Result<[usize; 6], ScenarioError> {
    if total < MIN_SUITE_SIZE {
        return Err(ScenarioError::Config(format!(
            "suite size {total} is below the minimum of {MIN_SUITE_SIZE}"
        )));
    }
    let mut counts = [0usize; 6];
    let mut rema = [(0usize, 0usize); 6];
    for i in 0..6 {
        let num = REFERENCE_COUNTS[i] * total;
        counts[i] = num / REFERENCE_TOTAL;
        rema[i] = (num % REFERENCE_TOTAL, i);
    }
    let mut left = total - counts.iter().sum::<usize>();
    // largest remainder first, earlier category on ties
    rema.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, i) in rema {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    Ok(counts)
}

fn scenario_seed(suite_seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(suite_seed);
    rng.set_stream(index as u64);
    rng.next_u64()
}

pub fn generate_suite(seed: u64, total: usize) -> Result<Vec<Scenario>, ScenarioError> {
    let counts = category_counts(total)?;
    let mut out = Vec::with_capacity(total);
    for (cat, n) in Category::ALL.iter().zip(counts) {
        for _ in 0..n {
            let index = out.len();
            out.push(generate_scenario(scenario_seed(seed, index), index, *cat)?);
        }
    }
    Ok(out)
}

/// Builds one scenario of `category` from its own seed.
pub fn generate_scenario(seed: u64, index: usize, category: Category) -> Result<Scenario, ScenarioError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder::new(&mut rng, category)?;
    let (instruction, directness, goal) = match category {
        Category::Distance => b.distance()?,
        Category::Speed => b.speed()?,
        Category::PullOver => b.pull_over()?,
        Category::Routing => b.routing()?,
        Category::LaneChange => b.lane_change()?,
        Category::Overtake => b.overtake()?,
    };
    b.fill_traffic();
    let route = b.route(&goal)?;
    let setting = if category == Category::Routing { Setting::Intersection } else { Setting::Highway };
    let time_limit = match setting {
        Setting::Highway => HIGHWAY_TIME_LIMIT,
        Setting::Intersection => INTERSECTION_TIME_LIMIT,
    };
    let mut world = WorldState::new(b.road.clone(), b.vehicles.clone(), seed)?;
    world.conditions = b.conditions;
    let scenario = Scenario {
        id: format!("s{index:05}-{}", category.as_str()),
        category,
        setting,
        instruction,
        directness,
        ego: VehicleId(0),
        initial: world,
        background: b.background.clone(),
        goal,
        route,
        time_limit,
        seed,
    };
    scenario.validate()?;
    Ok(scenario)
}

fn kmh(v: f64) -> f64 {
    v * 3.6
}

fn ms(kmh: f64) -> f64 {
    kmh / 3.6
}

/// IDM equilibrium gap of the default driver following at `v` under limit `limit`.
fn idm_equilibrium_gap(v: f64, limit: f64) -> f64 {
    let p = IdmParams::for_speed_limit(limit);
    let s_star = p.min_gap + v * p.time_headway;
    s_star / (1.0 - (v / p.desired_speed).powf(p.exponent)).sqrt()
}

struct Builder<'a> {
    rng: &'a mut ChaCha8Rng,
    category: Category,
    road: RoadNetwork,
    vehicles: Vec<crate::sim::VehicleState>,
    background: Vec<BackgroundSpec>,
    conditions: Conditions,
    limit: f64,
    ego_lane: usize,
    /// Lanes where filler traffic may not be placed.
    reserved: Vec<usize>,
    /// Filler traffic in the ego lane must stay this far behind the ego.
    ego_lane_behind: Option<f64>,
}

impl<'a> Builder<'a> {
    fn new(rng: &'a mut ChaCha8Rng, category: Category) -> Result<Self, ScenarioError> {
        let conditions = Conditions {
            weather: *Weather::ALL.choose(rng).expect("nonempty"),
            traffic_density: *[TrafficDensity::Light, TrafficDensity::Moderate, TrafficDensity::Heavy]
                .choose(rng)
                .expect("nonempty"),
        };
        let (road, limit) = if category == Category::Routing {
            let limit = ms(*[40.0, 50.0, 60.0].choose(rng).expect("nonempty"));
            (RoadNetwork::with_intersection(rng.gen_range(2..=3), APPROACH_LENGTH, limit), limit)
        } else {
            let min_kmh = if category == Category::Overtake { 60.0 } else { 50.0 };
            let choices: Vec<f64> = [50.0, 60.0, 70.0, 80.0, 90.0, 100.0]
                .into_iter()
                .filter(|k| *k >= min_kmh)
                .collect();
            let limit = ms(*choices.choose(rng).expect("nonempty"));
            (RoadNetwork::highway(rng.gen_range(2..=4), HIGHWAY_LENGTH, limit), limit)
        };
        Ok(Builder {
            rng,
            category,
            road,
            vehicles: Vec::new(),
            background: Vec::new(),
            conditions,
            limit,
            ego_lane: 0,
            reserved: Vec::new(),
            ego_lane_behind: None,
        })
    }

    fn lane_count(&self) -> usize {
        self.road.segments[0].lane_count
    }

    fn ego_s(&self) -> f64 {
        match self.category {
            Category::Routing => self.vehicles[0].position.x,
            _ => EGO_START,
        }
    }

    fn add(&mut self, lane: usize, s: f64, speed: f64, role: Role) -> Result<VehicleId, ScenarioError> {
        let id = VehicleId(self.vehicles.len() as u32);
        let v = place_vehicle(&self.road, id, SegmentId(0), lane, s, speed, role)?;
        self.vehicles.push(v);
        Ok(id)
    }

    /// Background driver cruising at `desired`; other parameters jittered.
    fn add_background(&mut self, lane: usize, s: f64, desired: f64) -> Result<VehicleId, ScenarioError> {
        let id = self.add(lane, s, desired, Role::Background)?;
        let mut idm = IdmParams::for_speed_limit(desired).jittered(self.rng, DRIVER_JITTER);
        idm.desired_speed = desired;
        self.background.push(BackgroundSpec { id, idm, lane_changes: false });
        Ok(id)
    }

    fn pick<T: Copy>(&mut self, items: &[T]) -> T {
        *items.choose(self.rng).expect("nonempty bank")
    }

    fn distance(&mut self) -> Result<(String, Directness, GoalSpec), ScenarioError> {
        let n = self.lane_count();
        self.ego_lane = self.rng.gen_range(0..n);
        self.reserved.push(self.ego_lane);
        for _ in 0..1000 {
            let v_lead = self.limit * self.rng.gen_range(0.5..0.85);
            let g_eq = idm_equilibrium_gap(v_lead, self.limit);
            let (tpl, target_kind) = self.pick(templates::DISTANCE);
            let (target, g0) = match target_kind {
                GapTarget::Explicit => {
                    let target = 5.0 * self.rng.gen_range(3..=12) as f64;
                    let tol = distance_tolerance(target);
                    let step = self.rng.gen_range(8.0..12.0);
                    let g0 = if target > g_eq { target - step } else { target + step };
                    // the baseline drifts toward g_eq, so g0 must sit between target and g_eq
                    let between = if target > g_eq { g0 > g_eq + 3.0 } else { g0 < g_eq - 3.0 };
                    if !between || (target - g_eq).abs() < tol + 8.0 || g0 < 10.0 {
                        continue;
                    }
                    (target, g0)
                }
                GapTarget::Relative(delta) => {
                    let g0 = if delta > 0.0 {
                        g_eq + self.rng.gen_range(5.0..15.0)
                    } else {
                        g_eq - self.rng.gen_range(3.0..10.0)
                    };
                    let target = g0 + delta;
                    if target < 12.0 || g0 < 10.0 {
                        continue;
                    }
                    (target, g0)
                }
            };
            let s = EGO_START;
            self.add(self.ego_lane, s, v_lead, Role::Ego)?;
            self.add_background(self.ego_lane, s + g0 + CAR_LENGTH, v_lead)?;
            let text = tpl.text.replace("{gap}", &format!("{}", target.round() as i64));
            let goal = GoalSpec {
                kind: GoalKind::Distance { target_gap: target, tolerance: distance_tolerance(target) },
                hold_duration: DISTANCE_HOLD,
            };
            return Ok((text, tpl.level, goal));
        }
        Err(ScenarioError::Config("could not place a distance scenario".into()))
    }

    fn speed(&mut self) -> Result<(String, Directness, GoalSpec), ScenarioError> {
        let n = self.lane_count();
        self.ego_lane = self.rng.gen_range(0..n);
        self.ego_lane_behind = Some(30.0);
        let limit = self.limit;
        let (tpl, kind) = self.pick(templates::SPEED);
        let (target, text) = match kind {
            SpeedTarget::Explicit => {
                let lo = (kmh(0.4 * limit) / 5.0).ceil() as i64;
                let hi = (kmh(limit - 4.0) / 5.0).floor() as i64;
                let k = 5 * self.rng.gen_range(lo..=hi);
                (ms(k as f64), tpl.text.replace("{kmh}", &k.to_string()))
            }
            SpeedTarget::OfLimit(f) => (f * limit, tpl.text.to_string()),
        };
        let initial = if target + 3.0 <= limit {
            self.rng.gen_range(target + 3.0..=limit)
        } else {
            0.6 * limit
        };
        self.add(self.ego_lane, EGO_START, initial, Role::Ego)?;
        let goal = GoalSpec {
            kind: GoalKind::Speed { min: target - SPEED_BAND, max: target + SPEED_BAND },
            hold_duration: SPEED_HOLD,
        };
        Ok((text, tpl.level, goal))
    }

    fn pull_over(&mut self) -> Result<(String, Directness, GoalSpec), ScenarioError> {
        let n = self.lane_count();
        self.ego_lane = self.rng.gen_range(n.saturating_sub(2)..n);
        self.reserved.extend(self.ego_lane..n);
        let speed = self.limit * self.rng.gen_range(0.6..0.9);
        self.add(self.ego_lane, EGO_START, speed, Role::Ego)?;
        let tpl = self.pick(templates::PULL_OVER);
        let goal = GoalSpec { kind: GoalKind::PullOver { max_speed: PULL_OVER_SPEED }, hold_duration: PULL_OVER_HOLD };
        Ok((tpl.text.to_string(), tpl.level, goal))
    }

    fn routing(&mut self) -> Result<(String, Directness, GoalSpec), ScenarioError> {
        let n = self.lane_count();
        let exit = self.pick(&[Direction::Left, Direction::Right, Direction::Straight]);
        self.ego_lane = match exit {
            Direction::Left => 0,
            Direction::Right => n - 1,
            Direction::Straight => self.rng.gen_range(0..n),
        };
        self.reserved.push(self.ego_lane);
        let s = APPROACH_LENGTH - self.rng.gen_range(50.0..85.0);
        let speed = self.limit * self.rng.gen_range(0.6..0.9);
        self.add(self.ego_lane, s, speed, Role::Ego)?;
        let bank: &[Template] =
            if exit == Direction::Straight { templates::ROUTING_STRAIGHT } else { templates::ROUTING };
        let tpl = self.pick(bank);
        let text = tpl.text.replace("{dir}", exit.as_str()).replace("{where}", templates::where_phrase(exit));
        let goal = GoalSpec {
            kind: GoalKind::Routing { exit, min_progress: ROUTING_PROGRESS },
            hold_duration: 0.0,
        };
        Ok((text, tpl.level, goal))
    }

    fn lane_change(&mut self) -> Result<(String, Directness, GoalSpec), ScenarioError> {
        let n = self.lane_count();
        self.ego_lane = self.rng.gen_range(0..n);
        let dir = if self.ego_lane == 0 {
            Direction::Right
        } else if self.ego_lane == n - 1 {
            Direction::Left
        } else {
            self.pick(&[Direction::Left, Direction::Right])
        };
        let target = if dir == Direction::Left { self.ego_lane - 1 } else { self.ego_lane + 1 };
        self.reserved.push(target);
        self.ego_lane_behind = Some(30.0);
        let speed = self.limit * self.rng.gen_range(0.7..0.95);
        self.add(self.ego_lane, EGO_START, speed, Role::Ego)?;
        let tpl = self.pick(templates::LANE_CHANGE);
        let goal = GoalSpec {
            kind: GoalKind::LaneChange { target_lane: target, tolerance: 0.5 },
            hold_duration: LANE_CHANGE_HOLD,
        };
        Ok((tpl.text.replace("{dir}", dir.as_str()), tpl.level, goal))
    }

    fn overtake(&mut self) -> Result<(String, Directness, GoalSpec), ScenarioError> {
        let n = self.lane_count();
        self.ego_lane = self.rng.gen_range(1..n);
        self.reserved.extend([self.ego_lane, self.ego_lane - 1]);
        let speed = self.limit * self.rng.gen_range(0.75..0.9);
        let lead_speed = self.limit * self.rng.gen_range(0.4..0.55);
        let g0 = self.rng.gen_range(25.0..40.0);
        self.add(self.ego_lane, EGO_START, speed, Role::Ego)?;
        let lead = self.add_background(self.ego_lane, EGO_START + g0 + CAR_LENGTH, lead_speed)?;
        let tpl = self.pick(templates::OVERTAKE);
        let goal = GoalSpec {
            kind: GoalKind::Overtake { lead, lane: self.ego_lane, margin: OVERTAKE_MARGIN },
            hold_duration: OVERTAKE_HOLD,
        };
        Ok((tpl.text.to_string(), tpl.level, goal))
    }

    /// Filler traffic according to the density, kept off reserved lanes.
    fn fill_traffic(&mut self) {
        let attempts = match self.conditions.traffic_density {
            TrafficDensity::Light => 1,
            TrafficDensity::Moderate => 3,
            TrafficDensity::Heavy => 5,
        };
        let n = self.lane_count();
        let ego_s = self.ego_s();
        let lanes: Vec<usize> = (0..n)
            .filter(|l| !self.reserved.contains(l) && (*l != self.ego_lane || self.ego_lane_behind.is_some()))
            .collect();
        if lanes.is_empty() {
            return;
        }
        let lw = self.road.lane_width;
        let seg = self.road.segments[0].clone();
        for _ in 0..attempts {
            let lane = self.pick(&lanes);
            let (lo, hi) = if lane == self.ego_lane {
                (ego_s - 90.0, ego_s - self.ego_lane_behind.unwrap_or(30.0) - CAR_LENGTH)
            } else if self.category == Category::Routing {
                (5.0, APPROACH_LENGTH - 10.0)
            } else {
                (ego_s - 80.0, ego_s + 150.0)
            };
            if lo >= hi {
                continue;
            }
            let s = self.rng.gen_range(lo..hi);
            if s < 5.0 {
                continue;
            }
            let p = seg.lane_point(s, lane, lw);
            let crowded = self
                .vehicles
                .iter()
                .any(|v| (v.position - p).norm() < MIN_SPACING && seg.nearest_lane(seg.to_local(v.position).1, lw) == lane);
            if crowded {
                continue;
            }
            let ego_speed = self.vehicles[0].speed;
            let desired = if lane == self.ego_lane {
                // never faster than the ego it trails
                ego_speed.min(self.limit * self.rng.gen_range(0.8..1.0)).max(1.0)
            } else {
                self.limit * self.rng.gen_range(0.8..1.1)
            };
            let _ = self.add_background(lane, s, desired);
        }
    }

    fn route(&self, goal: &GoalSpec) -> Result<RouteSpec, ScenarioError> {
        let world = WorldState::new(self.road.clone(), self.vehicles.clone(), 0)?;
        let ego = &self.vehicles[0];
        let seg = self.road.segment(ego.segment)?;
        let (s0, _) = seg.to_local(ego.position);
        let lw = self.road.lane_width;
        match &goal.kind {
            GoalKind::Routing { exit, min_progress } => {
                let exit_seg = self.road.exit(*exit).ok_or_else(|| ScenarioError::Config("missing exit".into()))?;
                let lane = ego.lane_index.min(exit_seg.lane_count - 1);
                let pts = vec![
                    ego.position,
                    seg.lane_point(seg.length, ego.lane_index, lw),
                    exit_seg.lane_point(0.0, lane, lw),
                    exit_seg.lane_point(min_progress + 10.0, lane, lw),
                ];
                RouteSpec::new(pts).map_err(|e| ScenarioError::Config(e.to_string()))
            }
            GoalKind::PullOver { .. } => {
                let stop = ego.speed * ego.speed / (2.0 * 2.0) + 20.0;
                lane_route(&world, ego.segment, seg.lane_count - 1, s0, stop)
            }
            GoalKind::LaneChange { target_lane, .. } => {
                lane_route(&world, ego.segment, *target_lane, s0, 0.5 * self.limit * HIGHWAY_TIME_LIMIT)
            }
            _ => lane_route(&world, ego.segment, ego.lane_index, s0, 0.5 * self.limit * HIGHWAY_TIME_LIMIT),
        }
    }
}

/// Gap tolerance for a distance goal.
pub fn distance_tolerance(target: f64) -> f64 {
    (0.1 * target).max(2.0)
}

/// Half width of a speed goal band, m/s.
pub const SPEED_BAND: f64 = 1.5;

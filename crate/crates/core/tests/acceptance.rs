//! Acceptance checks. Each criterion prints one PASS or FAIL line; the
//! process exits nonzero if any fails.

use std::panic::{self, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use drivelm_core::agent::{PromptTemplates, ScriptRule, ScriptedBackend, FEEDBACK_HEADING, HISTORY_HEADING};
use drivelm_core::control::{
    mpc_plan, pid_step, DrivingStyle, ErrorState, LanePlan, MpcConfig, MpcWeights, PidGains, PidState,
};
use drivelm_core::dsl::{check_source, parse_program, safety_gate, start_execution, ActionIntent, GateLimits, GateStage, ResumeResult};
use drivelm_core::evaluator::*;
use drivelm_core::harness::{
    feedback_loop_run, render_report, run_dsl_attempt, run_suite, AgentSpec, BackendSpec, ReportStyle, RunConfig,
    ScriptedRubric, DEFAULT_REGENERATIONS,
};
use drivelm_core::memory::MemoryStore;
use drivelm_core::scenario::{generate_scenario, generate_suite, BackgroundSpec, Category, Scenario};
use drivelm_core::sim::{
    advance_vehicle, place_vehicle, Control, ContextSnapshot, Direction, DynamicsParams, Role, RoadNetwork, SegmentId,
    Vec2, VehicleId, WorldState, CAR_LENGTH,
};
use drivelm_core::traffic::{BaselineKind, IdmParams};
use drivelm_core::{ActionMatrix, ParameterTable};

fn close(a: f64, b: f64, tol: f64, what: &str) {
    assert!((a - b).abs() <= tol, "{what}: {a} vs {b} (tol {tol})");
}

fn oracle_config() -> RunConfig {
    RunConfig::new(AgentSpec::Dsl { backend: BackendSpec::Scripted { rules: None }, shots: 3 })
}

fn ttc_pipeline() {
    let t = ttc_pairwise(Vec2::new(0.0, 0.0), Vec2::new(20.0, 0.0), Vec2::new(50.0, 0.0), Vec2::new(10.0, 0.0));
    assert_eq!(t, Some(5.0));
    assert_eq!(ttc_score(Some(3.0)), 100.0);
    assert_eq!(ttc_score(Some(0.5)), 98.0);
    assert_eq!(ttc_score(Some(-1.0)), 0.0);
}

fn speed_variation_and_efficiency() {
    let (_, sigma) = speed_stats(&[12.5; 40]).unwrap();
    assert_eq!(sv_score(sigma, 5.0), 100.0);
    assert_eq!(sv_score(5.0, 5.0), 0.0);
    assert_eq!(te_score(30.0, 30.0), 0.0);
    assert_eq!(te_score(0.0, 30.0), 100.0);
}

fn comfort_reconstruction() {
    let w = ScoreWeights::default();
    assert_eq!(w.gamma, 20.0);
    let b = ComfortBaseline::default();
    let safe = talk2drive_score(Some(1.5), b.speed_variance, b.accel, b.jerk, &b, &w).unwrap();
    let unsafe_ = talk2drive_score(Some(1.49), b.speed_variance, b.accel, b.jerk, &b, &w).unwrap();
    close(safe, 86.0, 0.01, "tau >= 1.5");
    close(unsafe_, 56.0, 0.01, "tau < 1.5");
}

fn route_completion_and_penalty() {
    let c = InfractionCoefficients::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let rc = rng.gen_range(0.0..=100.0);
        close(driving_score(rc, infraction_penalty(&InfractionLedger::default(), &c)), rc, 1e-9, "DS = RC");
    }
    let mut two = InfractionLedger::default();
    two.push(InfractionKind::Collision, 1.0);
    two.push(InfractionKind::RedLight, 2.0);
    close(infraction_penalty(&two, &c), 0.42, 1e-12, "IP");

    let kinds = [InfractionKind::Collision, InfractionKind::RedLight, InfractionKind::OffRoute, InfractionKind::SpeedLimit];
    for _ in 0..1000 {
        let mut ledger = InfractionLedger::default();
        for _ in 0..rng.gen_range(0..8) {
            ledger.push(*kinds.choose(&mut rng).unwrap(), rng.gen_range(0.0..60.0));
        }
        let want: f64 = kinds.iter().map(|k| c.get(*k).powi(ledger.count(*k) as i32)).product();
        let ip = infraction_penalty(&ledger, &c);
        ledger.events.shuffle(&mut rng);
        let shuffled = infraction_penalty(&ledger, &c);
        close(ip, want, 1e-12, "IP vs powers");
        close(shuffled, ip, 1e-12, "IP order");
        let rc = rng.gen_range(0.0..=100.0);
        close(driving_score(rc, ip), rc * want, 1e-9, "DS = RC x IP");
    }
}

fn command_alignment_terms() {
    let table = ParameterTable::default();
    let weights = [1.0; 6];
    for style in [DrivingStyle::Conservative, DrivingStyle::Moderate, DrivingStyle::Aggressive] {
        let ranges = style_ranges(&table, style);
        let mid: Vec<f64> = ranges.iter().map(|r| (r.lower + r.upper) / 2.0).collect();
        let m = ActionMatrix::from_array([mid[0], mid[1], mid[2], mid[3], mid[4], mid[5]]);
        assert_eq!(command_alignment(&m, &ranges, &weights).unwrap(), 100.0);
        for i in 0..6 {
            let mut x = m.to_array();
            x[i] = ranges[i].max + 0.01;
            let a = command_alignment(&ActionMatrix::from_array(x), &ranges, &weights).unwrap();
            close(a, 500.0 / 6.0, 1e-9, "out of range term");
            x[i] = ranges[i].min - 0.01;
            assert_eq!(alignment_term(x[i], &ranges[i]), 0.0);
        }
        for r in &ranges {
            for k in [r.min, r.lower, r.upper, r.max] {
                let at = alignment_term(k, r);
                for eps in [1e-14, -1e-14] {
                    close(alignment_term(k + eps, r), at, 1e-9, "knot continuity");
                }
            }
        }
    }
}

fn takeover_arithmetic() {
    close(takeover_reduction(19.44, 5.56).unwrap(), 71.4, 0.1, "reduction");
    assert_eq!(takeover_reduction(0.14, 0.07), Some(50.0));
    assert_eq!(takeover_rate(1, 4), Some(0.25));
    assert_eq!(takeover_rate(0, 0), None);
}

/// Cost of a steering sequence, rolled out on the linear error model.
fn rollout_cost(e: &ErrorState, cfg: &MpcConfig, w: &MpcWeights, steer: &[f64]) -> f64 {
    let (mut lat, mut head) = (e.e_lat, e.e_head);
    let mut cost = 0.0;
    for d in steer {
        lat += e.v * cfg.dt * head;
        head += e.v * cfg.dt / cfg.wheelbase * d;
        cost += w.lateral * lat * lat + w.heading * head * head + w.steering * d * d;
    }
    cost
}

/// Zooming grid search: each round scans a grid around the best point and
/// halves the window once the best point is interior.
fn grid_best(e: &ErrorState, cfg: &MpcConfig, w: &MpcWeights) -> f64 {
    const POINTS: usize = 11;
    let n = cfg.horizon;
    let mut center = vec![0.0; n];
    let mut half = 2.0;
    let mut best = rollout_cost(e, cfg, w, &center);
    for _ in 0..60 {
        let step = 2.0 * half / (POINTS - 1) as f64;
        let mut idx = vec![0usize; n];
        let mut round_best = (center.clone(), vec![POINTS / 2; n]);
        loop {
            let cand: Vec<f64> = (0..n).map(|j| center[j] - half + idx[j] as f64 * step).collect();
            let c = rollout_cost(e, cfg, w, &cand);
            if c < best {
                best = c;
                round_best = (cand, idx.clone());
            }
            let mut j = 0;
            while j < n {
                idx[j] += 1;
                if idx[j] < POINTS {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
            if j == n {
                break;
            }
        }
        let (c, at) = round_best;
        center = c;
        if at.iter().all(|&i| i > 0 && i < POINTS - 1) {
            half /= 2.0;
        }
    }
    best
}

fn mpc_against_grid_search() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst_gap: f64 = 0.0;
    for case in 0..200 {
        let cfg = MpcConfig { horizon: 1 + case % 4, ..MpcConfig::default() };
        let e = ErrorState { e_lat: rng.gen_range(-1.0..1.0), e_head: rng.gen_range(-0.3..0.3), v: rng.gen_range(2.0..30.0) };
        let w = MpcWeights {
            lateral: rng.gen_range(0.1..5.0),
            heading: rng.gen_range(0.1..5.0),
            steering: rng.gen_range(0.1..5.0),
        };
        let plan = mpc_plan(&e, &cfg, &w).unwrap();
        let analytic = rollout_cost(&e, &cfg, &w, &plan);
        let grid = grid_best(&e, &cfg, &w);
        assert!(analytic <= grid + 1e-6, "case {case}: analytic {analytic} > grid {grid}");
        worst_gap = worst_gap.max(grid - analytic);
    }
    assert!(worst_gap < 1e-3, "grid search did not converge: gap {worst_gap}");

    let cfg = MpcConfig { horizon: 1, ..MpcConfig::default() };
    let w = MpcWeights { lateral: 1.0, heading: 1.0, steering: 1.0 };
    let d = mpc_plan(&ErrorState { e_lat: 0.0, e_head: 0.2, v: 10.0 }, &cfg, &w).unwrap()[0];
    close(d, -0.06897, 1e-5, "single-step steering");
    assert!(started.elapsed() < Duration::from_secs(30), "took {:?}", started.elapsed());
}

fn pid_and_lane_keeping() {
    let dt = 0.5;
    let p = PidGains { kp: 1.5, ki: 0.0, kd: 0.0 };
    let (a, _) = pid_step(&PidState { integral: 0.0, prev_error: 2.0 }, 2.0, dt, &p, 50.0);
    assert_eq!(a, 3.0);

    let i = PidGains { kp: 0.0, ki: 0.25, kd: 0.0 };
    let mut s = PidState::default();
    for _ in 0..3 {
        (_, s) = pid_step(&s, 1.0, dt, &i, 50.0);
    }
    let (a, _) = pid_step(&s, 1.0, dt, &i, 50.0);
    assert_eq!(a, 0.5);

    let d = PidGains { kp: 0.0, ki: 0.0, kd: 0.25 };
    let (a, _) = pid_step(&PidState { integral: 0.0, prev_error: 1.0 }, 3.0, dt, &d, 50.0);
    assert_eq!(a, 1.0);

    // closed loop from a 1 m offset at 10 m/s with the default weights
    let road = RoadNetwork::highway(3, 2000.0, 30.0);
    let seg = road.segment(SegmentId(0)).unwrap().clone();
    let mut car = place_vehicle(&road, VehicleId(0), SegmentId(0), 1, 50.0, 10.0, Role::Ego).unwrap();
    let plan = LanePlan::keep(&seg, seg.lane_offset(1, road.lane_width));
    car.position = car.position + seg.direction().perp() * 1.0;
    close(plan.error(car.position, car.heading, car.speed).e_lat.abs(), 1.0, 1e-9, "initial offset");
    let dyn_params = DynamicsParams::default();
    let cfg = MpcConfig::default();
    let w = ParameterTable::default().defaults().mpc();
    for _ in 0..100 {
        let e = plan.error(car.position, car.heading, car.speed);
        let steer = mpc_plan(&e, &cfg, &w).unwrap()[0].clamp(-cfg.max_steer, cfg.max_steer);
        car = advance_vehicle(&car, Control::new(0.0, steer), &dyn_params).unwrap();
    }
    let e = plan.error(car.position, car.heading, car.speed);
    assert!(e.e_lat.abs() < 0.05, "e_lat after 10 s: {}", e.e_lat);
}

fn deterministic_reports() {
    let a = run_suite(&oracle_config(), &generate_suite(21, 49).unwrap()).unwrap();
    let b = run_suite(&oracle_config(), &generate_suite(21, 49).unwrap()).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(render_report(&a, ReportStyle::Table, None), render_report(&b, ReportStyle::Table, None));
}

fn baselines_versus_oracle() {
    let started = Instant::now();
    let suite = generate_suite(7, 100).unwrap();
    for kind in [BaselineKind::Idm, BaselineKind::Mobil] {
        let r = run_suite(&RunConfig::new(AgentSpec::Baseline { model: kind }), &suite).unwrap();
        assert_eq!(r.aggregates.scored, 100);
        assert_eq!(r.aggregates.collision_pct, 0.0, "{} collided", kind.as_str());
        assert!(r.aggregates.completion_pct < 35.0, "{}: {}", kind.as_str(), r.aggregates.completion_pct);
    }
    let r = run_suite(&oracle_config(), &suite).unwrap();
    assert_eq!(r.aggregates.collision_pct, 0.0);
    assert!(r.aggregates.completion_pct >= 90.0, "oracle: {}", r.aggregates.completion_pct);
    assert!(started.elapsed() < Duration::from_secs(300));
}

const FRONT_VEHICLE_LISTING: &str = "\
def start_driving_with_front_vehicle_check():
    (is_front_vehicle,
     distance_to_front_vehicle,
     speed_of_front_vehicle)
     = check_front_vehicle()
    if (is_front_vehicle
        and distance_to_front_vehicle < 5
        and speed_of_front_vehicle == 0.0):
        yield stop()
    else:
        speed_limit = check_speed_limit()
        yield proceed(speed_limit)
";

/// Ego at rest with a parked car 6.8 m ahead in its lane.
fn parked_car_scenario() -> Scenario {
    let base = generate_scenario(5, 0, Category::Speed).unwrap();
    let road = base.initial.road.clone();
    let ego = base.initial.ego().unwrap();
    let (lane, seg) = (ego.lane_index, ego.segment);
    let s = road.segment(seg).unwrap().to_local(ego.position).0;
    let me = place_vehicle(&road, VehicleId(0), seg, lane, s, 0.0, Role::Ego).unwrap();
    let parked = place_vehicle(&road, VehicleId(1), seg, lane, s + CAR_LENGTH + 6.8, 0.0, Role::Background).unwrap();
    let idm = IdmParams { desired_speed: 1e-3, ..IdmParams::for_speed_limit(1.0) };
    Scenario {
        initial: WorldState::new(road, vec![me, parked], base.seed).unwrap(),
        background: vec![BackgroundSpec { id: VehicleId(1), idm, lane_changes: false }],
        ..base
    }
}

fn front_vehicle_failure_mode() {
    let scenario = parked_car_scenario();
    let response = format!("Thought: go.\n```lmp\n{FRONT_VEHICLE_LISTING}```");
    let backend = ScriptedBackend::new(
        "listing",
        vec![ScriptRule { pattern: ".*".into(), syntax: Default::default(), feedback: None, response }],
    )
    .unwrap();
    let attempt =
        run_dsl_attempt(&scenario, &backend, &PromptTemplates::builtin(), &oracle_config(), &[], None).unwrap();
    let verdict = attempt.row.verdict.as_ref().expect("gate ran");
    assert!(verdict.accepted, "{verdict:?}");
    let card = attempt.row.card.as_ref().expect("scored");
    assert!(card.collided);
    assert!(!card.completed);
    assert!(card.ip < 1.0);
    assert_eq!(card.score, 0.0);
}

/// Random program text for the gate fuzz.
fn fuzz_program(rng: &mut ChaCha8Rng) -> String {
    fn arg(rng: &mut ChaCha8Rng) -> String {
        match rng.gen_range(0..6) {
            0 => format!("{}", rng.gen_range(-5..45)),
            1 => format!("check_speed_limit() * {:.2}", rng.gen_range(0.5..1.5)),
            2 => format!("kmh({})", rng.gen_range(0..150)),
            3 => format!("current_speed() + {}", rng.gen_range(-10..15)),
            4 => format!("min(check_speed_limit(), {})", rng.gen_range(0..40)),
            _ => format!("x * {}", rng.gen_range(0..4)),
        }
    }
    fn action(rng: &mut ChaCha8Rng) -> String {
        let dir = ["left", "right", "straight"][rng.gen_range(0..3)];
        match rng.gen_range(0..7) {
            0 | 1 => format!("yield proceed({})", arg(rng)),
            2 => format!("yield follow_lead({:.1})", rng.gen_range(-1.0..14.0)),
            3 | 4 => format!("yield change_lane({dir})"),
            5 => format!("yield turn({dir})"),
            _ => ["yield stop()", "yield pull_over()"][rng.gen_range(0..2)].to_string(),
        }
    }
    fn block(rng: &mut ChaCha8Rng, pad: usize, depth: u32, out: &mut String) {
        for _ in 0..rng.gen_range(1..4) {
            let p = " ".repeat(pad);
            match if depth == 0 { 0 } else { rng.gen_range(0..4) } {
                0 | 1 => out.push_str(&format!("{p}{}\n", action(rng))),
                2 => {
                    let side = ["left", "right"][rng.gen_range(0..2)];
                    let neg = if rng.gen_bool(0.5) { "not " } else { "" };
                    out.push_str(&format!("{p}if {neg}lane_clear({side}):\n"));
                    block(rng, pad + 4, depth - 1, out);
                    if rng.gen_bool(0.5) {
                        out.push_str(&format!("{p}else:\n"));
                        block(rng, pad + 4, depth - 1, out);
                    }
                }
                _ => {
                    out.push_str(&format!("{p}while x < {}:\n", rng.gen_range(1..4)));
                    out.push_str(&format!("{p}    x = x + 1\n"));
                    block(rng, pad + 4, depth - 1, out);
                }
            }
        }
    }
    let mut out = format!("x = {}\n", rng.gen_range(0..3));
    block(rng, 0, 2, &mut out);
    out
}

fn bound_violation(intent: &ActionIntent, snap: &ContextSnapshot, lim: &GateLimits) -> Option<String> {
    match *intent {
        ActionIntent::Proceed { speed } if speed <= 0.0 || speed > lim.speed_factor * snap.speed_limit + 1e-9 => {
            Some(format!("speed {speed}"))
        }
        ActionIntent::FollowLead { headway } if headway <= 0.0 || headway > lim.max_headway => {
            Some(format!("headway {headway}"))
        }
        ActionIntent::ChangeLane { direction: Direction::Left } if snap.lane_index == 0 => Some("left of lane 0".into()),
        ActionIntent::ChangeLane { direction: Direction::Right } if snap.lane_index + 1 >= snap.lane_count => {
            Some("right of the last lane".into())
        }
        ActionIntent::ChangeLane { direction: Direction::Straight } => Some("change_lane(straight)".into()),
        ActionIntent::Turn { direction } if !snap.intersection_exits.contains(&direction) => Some(format!("turn {direction}")),
        _ => None,
    }
}

fn safety_gate_checks() {
    let lim = GateLimits::default();
    let (_, v) = check_source("yield change_lane(left)\n", &ContextSnapshot::open_road(20.0, 0, 3, 25.0), &lim);
    assert!(!v.accepted);
    let (p, v) = check_source("Sure, here you go: yield proceed(", &ContextSnapshot::open_road(20.0, 1, 3, 25.0), &lim);
    assert!(p.is_none());
    assert_eq!(v.stage, Some(GateStage::Format));

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut accepted, mut violations) = (0, Vec::new());
    for _ in 0..10_000 {
        let src = fuzz_program(&mut rng);
        let n = rng.gen_range(1..5usize);
        let mut snap = ContextSnapshot::open_road(rng.gen_range(0.0..30.0), rng.gen_range(0..n), n, rng.gen_range(8.0..30.0));
        if rng.gen_bool(0.25) {
            snap.at_intersection = true;
            snap.intersection_exits = vec![Direction::Straight, Direction::Right];
        }
        let Ok(program) = parse_program(&src) else { continue };
        if !safety_gate(&program, &snap, &lim).accepted {
            continue;
        }
        accepted += 1;
        let mut ex = start_execution(Arc::new(program));
        for _ in 0..40 {
            snap.left_lane_clear = snap.lane_index > 0 && rng.gen_bool(0.5);
            snap.right_lane_clear = snap.lane_index + 1 < n && rng.gen_bool(0.5);
            let ResumeResult::Yielded(intent) = ex.resume(&snap) else { break };
            if let Some(v) = bound_violation(&intent, &snap, &lim) {
                violations.push(format!("{v}:\n{src}"));
                break;
            }
            match intent {
                ActionIntent::ChangeLane { direction: Direction::Left } => snap.lane_index -= 1,
                ActionIntent::ChangeLane { direction: Direction::Right } => snap.lane_index += 1,
                ActionIntent::PullOver => snap.lane_index = n - 1,
                _ => {}
            }
        }
    }
    assert!(accepted >= 1000, "only {accepted} programs accepted");
    assert!(violations.is_empty(), "{} violations, first: {}", violations.len(), violations[0]);
}

fn feedback_loop() {
    let suite = generate_suite(11, 49).unwrap();
    let scenario = suite.into_iter().find(|s| s.category == Category::Speed).unwrap();
    let good = ScriptedBackend::oracle().respond(&scenario.instruction, None).unwrap();
    let slow = "Thought: crawl.\n```lmp\ndef policy():\n    yield proceed(kmh(5))\n```".to_string();
    let backend = ScriptedBackend::new(
        "rubric",
        vec![
            ScriptRule { pattern: ".*".into(), syntax: Default::default(), feedback: Some("(?i)too slow".into()), response: good },
            ScriptRule { pattern: ".*".into(), syntax: Default::default(), feedback: None, response: slow },
        ],
    )
    .unwrap();
    let mut memory = MemoryStore::in_memory();
    let suite = vec![scenario];
    let run = |memory: &mut MemoryStore| {
        feedback_loop_run(&oracle_config(), &suite, &backend, 3, &ScriptedRubric, memory, "driver", DEFAULT_REGENERATIONS)
            .unwrap()
    };
    let (report, log) = run(&mut memory);
    assert_eq!(report.rows[0].regenerations, 1);
    assert_eq!(log.len(), 2);
    let f = &log[0].feedback.text;
    assert!(!log[0].feedback.positive);
    assert!(log[1].prompt.contains(&format!("{FEEDBACK_HEADING}\n{f}")), "feedback missing from the regeneration prompt");
    assert!(log[1].feedback.positive);
    let committed = log[1].committed.expect("positive attempt committed");

    let (_, again) = run(&mut memory);
    let (id, sim) = again[0].retrieved[0];
    assert_eq!(id, committed);
    close(sim, 1.0, 1e-9, "similarity of an identical instruction");
    assert!(again[0].prompt.contains(HISTORY_HEADING));
}

fn suite_statistics() {
    let suite = generate_suite(3, 4900).unwrap();
    let counts: Vec<usize> = Category::ALL.iter().map(|c| suite.iter().filter(|s| s.category == *c).count()).collect();
    assert_eq!(counts, vec![1200, 1200, 200, 1500, 400, 400]);
}

fn main() {
    let criteria: [(&str, fn()); 14] = [
        ("time-to-collision pipeline", ttc_pipeline),
        ("speed variation and time efficiency", speed_variation_and_efficiency),
        ("comfort score reconstruction", comfort_reconstruction),
        ("route completion, infraction penalty, driving score", route_completion_and_penalty),
        ("command alignment", command_alignment_terms),
        ("takeover arithmetic", takeover_arithmetic),
        ("MPC against grid search", mpc_against_grid_search),
        ("PID gain isolation and lane keeping", pid_and_lane_keeping),
        ("deterministic reports", deterministic_reports),
        ("baselines versus oracle program agent", baselines_versus_oracle),
        ("front vehicle at 6.8 m collides", front_vehicle_failure_mode),
        ("safety gate", safety_gate_checks),
        ("feedback loop", feedback_loop),
        ("suite statistics", suite_statistics),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(()) => println!("criterion {:>2} PASS {name} ({secs:.2} s)", i + 1),
            Err(e) => {
                failed += 1;
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("criterion {:>2} FAIL {name} ({secs:.2} s): {msg}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

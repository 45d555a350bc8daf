use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::sim::{ContextSnapshot, FrontVehicle, VehicleId};

pub(crate) const FRONT_VEHICLE_LISTING: &str = "\
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

fn stopped_car_ahead() -> ContextSnapshot {
    let mut s = ContextSnapshot::open_road(0.0, 1, 3, 20.0);
    s.front_vehicle = Some(FrontVehicle {
        id: VehicleId(1),
        distance: 6.8,
        speed: 0.0,
        bearing_deg: 1.9,
        relative_heading_deg: 0.0,
    });
    s
}

fn run_all(src: &str, snap: &ContextSnapshot) -> Vec<ResumeResult> {
    let p = Arc::new(parse_program(src).unwrap());
    let mut ex = start_execution(p);
    let mut out = Vec::new();
    for _ in 0..20 {
        let r = ex.resume(snap);
        let done = !matches!(r, ResumeResult::Yielded(_));
        out.push(r);
        if done {
            break;
        }
    }
    out
}

#[test]
fn front_vehicle_listing_proceeds() {
    let snap = stopped_car_ahead();
    let (p, verdict) = check_source(FRONT_VEHICLE_LISTING, &snap, &GateLimits::default());
    assert!(verdict.accepted, "{verdict:?}");
    assert_eq!(p.unwrap().entry.as_deref(), Some("start_driving_with_front_vehicle_check"));
    let r = run_all(FRONT_VEHICLE_LISTING, &snap);
    assert_eq!(r, vec![ResumeResult::Yielded(ActionIntent::Proceed { speed: 20.0 }), ResumeResult::Finished]);
}

#[test]
fn unclosed_call_reports_position() {
    let e = parse_program("proceed(").unwrap_err();
    assert_eq!(e.kind, ParseErrorKind::Syntax);
    assert_eq!((e.pos.line, e.pos.col), (1, 8));
}

#[test]
fn unknown_function_is_rejected() {
    let e = parse_program("yield fly()").unwrap_err();
    assert_eq!(e.kind, ParseErrorKind::UnknownIdentifier);
    assert!(e.message.contains("fly"));
}

#[test]
fn banned_constructs() {
    for src in ["import os", "for i in x:\n    pass", "print(1)", "x = [1]", "lambda: 1"] {
        let e = parse_program(src).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::Banned, "{src}");
    }
}

#[test]
fn actions_only_via_yield() {
    assert!(parse_program("proceed(3)").is_err());
    assert!(parse_program("yield check_speed_limit()").is_err());
    assert!(parse_program("x = stop()").is_err());
}

#[test]
fn while_loop_yields_each_iteration() {
    let src = "i = 0\nwhile i < 3:\n    yield proceed(5 + i)\n    i = i + 1\n";
    let r = run_all(src, &ContextSnapshot::open_road(5.0, 0, 2, 20.0));
    assert_eq!(
        r,
        vec![
            ResumeResult::Yielded(ActionIntent::Proceed { speed: 5.0 }),
            ResumeResult::Yielded(ActionIntent::Proceed { speed: 6.0 }),
            ResumeResult::Yielded(ActionIntent::Proceed { speed: 7.0 }),
            ResumeResult::Finished,
        ]
    );
}

#[test]
fn busy_loop_exhausts_budget() {
    let r = run_all("while True:\n    x = 1\n", &ContextSnapshot::open_road(5.0, 0, 2, 20.0));
    assert!(matches!(&r[0], ResumeResult::Faulted(m) if m.contains("budget")));
}

#[test]
fn division_by_zero_faults() {
    let r = run_all("x = 0\nyield proceed(1 / x)\n", &ContextSnapshot::open_road(5.0, 0, 2, 20.0));
    assert!(matches!(&r[0], ResumeResult::Faulted(_)));
}

#[test]
fn gate_rejects_left_change_from_leftmost() {
    let snap = ContextSnapshot::open_road(20.0, 0, 3, 25.0);
    let (_, v) = check_source("yield change_lane(left)", &snap, &GateLimits::default());
    assert!(!v.accepted);
    assert_eq!(v.stage, Some(GateStage::Parameter));
    let (_, v) = check_source("yield change_lane(right)\nyield change_lane(left)", &snap, &GateLimits::default());
    assert!(v.accepted, "{v:?}");
}

#[test]
fn gate_rejects_malformed_text_at_format_stage() {
    let snap = ContextSnapshot::open_road(20.0, 1, 3, 25.0);
    let (p, v) = check_source("Sure! Here is the code: yield proceed(", &snap, &GateLimits::default());
    assert!(p.is_none());
    assert_eq!(v.stage, Some(GateStage::Format));
}

#[test]
fn gate_parameter_bounds() {
    let snap = ContextSnapshot::open_road(20.0, 1, 3, 25.0);
    let lim = GateLimits::default();
    assert!(!check_source("yield proceed(40)", &snap, &lim).1.accepted);
    assert!(check_source("yield proceed(27.5)", &snap, &lim).1.accepted);
    assert!(!check_source("yield proceed(0)", &snap, &lim).1.accepted);
    assert!(!check_source("yield follow_lead(12)", &snap, &lim).1.accepted);
    assert!(!check_source("yield turn(left)", &snap, &lim).1.accepted);
    assert!(check_source("yield proceed(1.1 * check_speed_limit())", &snap, &lim).1.accepted);
    assert!(!check_source("while current_speed() > 1:\n    x = 1\nyield proceed(x)", &snap, &lim).1.accepted);
}

#[test]
fn gate_tracks_lanes_through_loops() {
    let snap = ContextSnapshot::open_road(20.0, 2, 3, 25.0);
    let lim = GateLimits::default();
    let unbounded = "while current_speed() > 0:\n    yield change_lane(left)\n";
    assert!(!check_source(unbounded, &snap, &lim).1.accepted);
    let guarded = "while True:\n    if lane_clear(left):\n        yield change_lane(left)\n    yield stop()\n";
    assert!(check_source(guarded, &snap, &lim).1.accepted);
    let after_pull_over = "yield pull_over()\nyield change_lane(right)\n";
    assert!(!check_source(after_pull_over, &ContextSnapshot::open_road(20.0, 0, 3, 25.0), &lim).1.accepted);
}

// Random program text for the round-trip and gate soundness checks.
struct Gen {
    rng: ChaCha8Rng,
}

impl Gen {
    fn pick<'a>(&mut self, xs: &[&'a str]) -> &'a str {
        xs[self.rng.gen_range(0..xs.len())]
    }

    fn number(&mut self) -> String {
        match self.rng.gen_range(0..4) {
            0 => format!("{}", self.rng.gen_range(0..40)),
            1 => format!("{:.2}", self.rng.gen_range(0.0..40.0)),
            2 => format!("{:.1}", self.rng.gen_range(0.0..3.0)),
            _ => format!("{}e-1", self.rng.gen_range(1..99)),
        }
    }

    fn atom(&mut self) -> String {
        match self.rng.gen_range(0..9) {
            0..=2 => self.number(),
            3 => self.pick(&["a", "b", "c", "i", "n"]).to_string(),
            4 => self.pick(&["check_speed_limit()", "current_speed()", "kmh(50)"]).to_string(),
            5 => format!("lane_clear({})", self.pick(&["left", "right"])),
            6 => self.pick(&["at_intersection()", "True", "False"]).to_string(),
            7 => format!("min({}, {})", self.number(), self.atom()),
            _ => self.pick(&["d", "h"]).to_string(),
        }
    }

    fn expr(&mut self, depth: u32) -> String {
        if depth == 0 || self.rng.gen_bool(0.4) {
            return self.atom();
        }
        match self.rng.gen_range(0..5) {
            0 => format!("-{}", self.expr(depth - 1)),
            1 => format!("not {}", self.expr(depth - 1)),
            2 => format!("({})", self.expr(depth - 1)),
            _ => {
                let op = self.pick(&["+", "-", "*", "/", "<", ">=", "==", "and", "or"]);
                let l = self.expr(depth - 1);
                let r = self.expr(depth - 1);
                if ["<", ">=", "=="].contains(&op) {
                    format!("({l}) {op} ({r})")
                } else {
                    format!("{l} {op} {r}")
                }
            }
        }
    }

    fn action(&mut self) -> String {
        let dir = self.pick(&["left", "right", "left", "right", "straight"]);
        match self.rng.gen_range(0..8) {
            0 | 1 => format!("yield proceed({})", self.expr(2)),
            2 => "yield stop()".into(),
            3 => format!("yield follow_lead({})", self.expr(1)),
            4 | 5 => format!("yield change_lane({dir})"),
            6 => format!("yield turn({dir})"),
            _ => "yield pull_over()".into(),
        }
    }

    fn block(&mut self, indent: usize, depth: u32, out: &mut String) {
        let n = self.rng.gen_range(1..4);
        for _ in 0..n {
            self.stmt(indent, depth, out);
        }
    }

    fn stmt(&mut self, indent: usize, depth: u32, out: &mut String) {
        let pad = " ".repeat(indent);
        let choice = if depth == 0 { self.rng.gen_range(0..4) } else { self.rng.gen_range(0..8) };
        match choice {
            0 | 1 => out.push_str(&format!("{pad}{}\n", self.action())),
            2 => {
                let v = self.pick(&["a", "b", "c", "d", "h"]);
                let e = if v == "d" { self.pick(&["left", "right", "straight"]).to_string() } else { self.expr(2) };
                out.push_str(&format!("{pad}{v} = {e}\n"));
            }
            3 => out.push_str(&format!("{pad}i, n = current_lane()\n")),
            4 | 5 => {
                out.push_str(&format!("{pad}if {}:\n", self.expr(2)));
                self.block(indent + 4, depth - 1, out);
                if self.rng.gen_bool(0.3) {
                    out.push_str(&format!("{pad}elif {}:\n", self.expr(2)));
                    self.block(indent + 4, depth - 1, out);
                }
                if self.rng.gen_bool(0.5) {
                    out.push_str(&format!("{pad}else:\n"));
                    self.block(indent + 4, depth - 1, out);
                }
            }
            6 => {
                out.push_str(&format!("{pad}while {}:\n", self.expr(2)));
                out.push_str(&format!("{pad}    {}\n", self.action()));
                self.block(indent + 4, depth - 1, out);
            }
            _ => out.push_str(&format!("{pad}{}\n", if self.rng.gen_bool(0.5) { "pass" } else { "return" })),
        }
    }

    fn program(&mut self) -> String {
        let mut out = String::new();
        // declare every variable so name resolution succeeds
        out.push_str("a = 1\nb = 2\nc = 3\nh = 1.5\nd = left\n");
        self.block(0, 3, &mut out);
        out
    }
}

fn random_program(seed: u64) -> String {
    Gen { rng: ChaCha8Rng::seed_from_u64(seed) }.program()
}

proptest! {
    #[test]
    fn print_then_parse_is_identity(seed in any::<u64>()) {
        let src = random_program(seed);
        if let Ok(p) = parse_program(&src) {
            let printed = pretty_print(&p);
            let q = parse_program(&printed).unwrap();
            prop_assert!(p.same_ast(&q), "{src}\n---\n{printed}");
            prop_assert_eq!(pretty_print(&q), printed);
        }
    }
}

#[test]
fn listing_survives_round_trip() {
    let p = parse_program(FRONT_VEHICLE_LISTING).unwrap();
    assert!(p.same_ast(&parse_program(&pretty_print(&p)).unwrap()));
}

fn intent_violation(intent: &ActionIntent, lane: usize, snap: &ContextSnapshot, lim: &GateLimits) -> Option<String> {
    match *intent {
        ActionIntent::Proceed { speed } if !(speed > 0.0 && speed <= lim.speed_factor * snap.speed_limit + 1e-9) => {
            Some(format!("speed {speed}"))
        }
        ActionIntent::FollowLead { headway } if !(headway > 0.0 && headway <= lim.max_headway) => {
            Some(format!("headway {headway}"))
        }
        ActionIntent::ChangeLane { direction: crate::sim::Direction::Left } if lane == 0 => Some("left off road".into()),
        ActionIntent::ChangeLane { direction: crate::sim::Direction::Right } if lane + 1 >= snap.lane_count => {
            Some("right off road".into())
        }
        ActionIntent::Turn { direction } if !snap.intersection_exits.contains(&direction) => {
            Some(format!("turn {direction}"))
        }
        _ => None,
    }
}

#[test]
fn gate_is_sound_on_random_programs() {
    use crate::sim::Direction;
    let lim = GateLimits::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut parsed, mut accepted, mut violations) = (0, 0, Vec::new());
    for k in 0..10_000u64 {
        let src = random_program(k);
        let n = rng.gen_range(1..5usize);
        let mut snap = ContextSnapshot::open_road(rng.gen_range(0.0..30.0), rng.gen_range(0..n), n, rng.gen_range(10.0..30.0));
        if rng.gen_bool(0.3) {
            snap.at_intersection = true;
            snap.intersection_exits = vec![Direction::Straight, Direction::Left];
        }
        let Ok(p) = parse_program(&src) else { continue };
        parsed += 1;
        if !safety_gate(&p, &snap, &lim).accepted {
            continue;
        }
        accepted += 1;
        let mut ex = start_execution(Arc::new(p)).with_budget(2_000);
        let mut view = snap.clone();
        for _ in 0..30 {
            view.left_lane_clear = view.lane_index > 0 && rng.gen_bool(0.5);
            view.right_lane_clear = view.lane_index + 1 < n && rng.gen_bool(0.5);
            let ResumeResult::Yielded(intent) = ex.resume(&view) else { break };
            if let Some(v) = intent_violation(&intent, view.lane_index, &view, &lim) {
                violations.push(format!("{v}\n{src}"));
                break;
            }
            match intent {
                ActionIntent::ChangeLane { direction: Direction::Left } => view.lane_index -= 1,
                ActionIntent::ChangeLane { direction: Direction::Right } => view.lane_index += 1,
                ActionIntent::PullOver => view.lane_index = n - 1,
                _ => {}
            }
        }
    }
    assert!(parsed > 5_000, "generator too weak: {parsed} parsed");
    assert!(accepted > 1_000, "gate too strict: {accepted} accepted");
    assert!(violations.is_empty(), "{} violations, first:\n{}", violations.len(), violations[0]);
}

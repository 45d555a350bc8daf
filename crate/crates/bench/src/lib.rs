//! Fixtures shared by the benchmarks.

use drivelm_core::scenario::{generate_suite, Scenario};

/// Small mixed suite used by the suite benchmarks.
pub fn bench_suite() -> Vec<Scenario> {
    generate_suite(1, 49).expect("suite generates")
}

/// Program exercising most of the grammar.
pub const SAMPLE_PROGRAM: &str = "\
def policy():
    limit = check_speed_limit()
    is_front, gap, front_speed = check_front_vehicle()
    if is_front and gap < 30:
        yield follow_lead(2.0)
    elif lane_clear(left):
        yield change_lane(left)
        while not lane_clear(right):
            yield proceed(min(limit, kmh(100)))
        yield change_lane(right)
    else:
        yield proceed(limit * 0.9)
";

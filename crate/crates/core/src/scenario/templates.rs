//! Instruction template banks, tagged with command directness.
//!
//! Placeholders: `{kmh}` target speed, `{gap}` target gap in meters,
//! `{dir}` left/right, `{where}` a direction phrase for routing.

use serde::{Deserialize, Serialize};
use std::fmt;

/// How explicitly a command states the desired behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Directness {
    /// Direct command with explicit parameters.
    #[serde(rename = "I")]
    Direct,
    /// Strong hint: the behavior is named but not fully parameterized.
    #[serde(rename = "II")]
    StrongHint,
    /// Mild hint: the behavior has to be inferred.
    #[serde(rename = "III")]
    MildHint,
}

impl Directness {
    pub fn roman(self) -> &'static str {
        match self {
            Directness::Direct => "I",
            Directness::StrongHint => "II",
            Directness::MildHint => "III",
        }
    }
}

impl fmt::Display for Directness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Level {}", self.roman())
    }
}

/// How a speed template fixes its target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpeedTarget {
    /// Explicit value rendered into `{kmh}`.
    Explicit,
    /// Fraction of the posted limit.
    OfLimit(f64),
}

/// How a distance template fixes its target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GapTarget {
    Explicit,
    /// Offset in meters relative to the initial gap.
    Relative(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct Template {
    pub text: &'static str,
    pub level: Directness,
}

const fn t(text: &'static str, level: Directness) -> Template {
    Template { text, level }
}

use Directness::{Direct as I, MildHint as III, StrongHint as II};

pub const DISTANCE: &[(Template, GapTarget)] = &[
    (t("Keep a distance of {gap} meters from the car ahead.", I), GapTarget::Explicit),
    (t("Follow the vehicle in front at {gap} meters.", I), GapTarget::Explicit),
    (t("Stay about {gap} meters behind the car in front.", II), GapTarget::Explicit),
    (t("Give the car ahead roughly {gap} meters of room.", II), GapTarget::Explicit),
    (t("You are too close to that car.", III), GapTarget::Relative(15.0)),
    (t("No need to leave such a big gap.", III), GapTarget::Relative(-15.0)),
];

pub const SPEED: &[(Template, SpeedTarget)] = &[
    (t("Drive at {kmh} km/h.", I), SpeedTarget::Explicit),
    (t("Set the speed to {kmh} km/h.", I), SpeedTarget::Explicit),
    (t("Slow down to around {kmh} km/h.", II), SpeedTarget::Explicit),
    (t("Could you go about {kmh} km/h instead?", II), SpeedTarget::Explicit),
    (t("Could you drive more conservatively?", III), SpeedTarget::OfLimit(0.7)),
    (t("I feel a little carsick.", III), SpeedTarget::OfLimit(0.6)),
    (t("I'm really in a hurry now.", III), SpeedTarget::OfLimit(1.0)),
];

pub const PULL_OVER: &[Template] = &[
    t("Pull over on the right.", I),
    t("Pull over and stop.", I),
    t("Find a spot to stop on the right.", II),
    t("Let me out here, please.", II),
    t("I need to get out right now.", III),
];

/// Routing templates; `{where}` expands per direction.
pub const ROUTING: &[Template] = &[
    t("Turn {dir} at the intersection.", I),
    t("Take the next {dir}.", II),
    t("My office is {where}.", III),
];

pub const ROUTING_STRAIGHT: &[Template] = &[
    t("Go straight at the intersection.", I),
    t("Keep going straight ahead.", II),
    t("My office is {where}.", III),
];

pub const LANE_CHANGE: &[Template] = &[
    t("Change to the {dir} lane.", I),
    t("Move one lane to the {dir}.", I),
    t("Get into the {dir} lane when you can.", II),
    t("The {dir} lane seems to be moving better.", III),
];

pub const OVERTAKE: &[Template] = &[
    t("Overtake the car in front.", I),
    t("Pass the vehicle ahead.", I),
    t("Get around this slow car.", II),
    t("This car ahead is way too slow.", III),
];

pub fn where_phrase(dir: crate::sim::Direction) -> &'static str {
    match dir {
        crate::sim::Direction::Left => "to the left",
        crate::sim::Direction::Right => "to the right",
        crate::sim::Direction::Straight => "straight ahead",
    }
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Every template of every bank, for validation and coverage checks.
pub fn all_templates() -> Vec<Template> {
    let mut v: Vec<Template> = Vec::new();
    v.extend(DISTANCE.iter().map(|(t, _)| *t));
    v.extend(SPEED.iter().map(|(t, _)| *t));
    v.extend_from_slice(PULL_OVER);
    v.extend_from_slice(ROUTING);
    v.extend_from_slice(ROUTING_STRAIGHT);
    v.extend_from_slice(LANE_CHANGE);
    v.extend_from_slice(OVERTAKE);
    v
}

//! Driving-program language: a small indentation-structured language whose
//! programs yield driving actions one at a time.
//!
//! The grammar is published in `docs/lmp-grammar.md`. Programs may only call
//! the whitelisted driving API; everything else is rejected at parse time.

pub mod ast;
mod gate;
mod interp;
mod lexer;
mod parser;
mod printer;

pub use ast::{Pos, Program};
pub use gate::{check_source, safety_gate, GateLimits, GateStage, GateVerdict};
pub use interp::{start_execution, Execution, ResumeResult, Value, STEP_BUDGET};
pub use parser::parse_program;
pub use printer::pretty_print;

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use crate::sim::Direction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseErrorKind {
    Lexical,
    Syntax,
    UnknownIdentifier,
    Banned,
    /// Structurally valid but violates a static rule (arity, loop progress, ...).
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{pos}: {message}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub message: String,
    pub pos: Pos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApiKind {
    Query,
    Action,
    Helper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ApiEntry {
    pub name: &'static str,
    pub kind: ApiKind,
    pub min_args: usize,
    pub max_args: usize,
}

const fn api(name: &'static str, kind: ApiKind, min_args: usize, max_args: usize) -> ApiEntry {
    ApiEntry { name, kind, min_args, max_args }
}

/// The complete callable surface of the language.
pub const API: &[ApiEntry] = &[
    api("check_front_vehicle", ApiKind::Query, 0, 0),
    api("check_speed_limit", ApiKind::Query, 0, 0),
    api("current_speed", ApiKind::Query, 0, 0),
    api("current_lane", ApiKind::Query, 0, 0),
    api("at_intersection", ApiKind::Query, 0, 0),
    api("lane_clear", ApiKind::Query, 1, 1),
    api("proceed", ApiKind::Action, 1, 1),
    api("stop", ApiKind::Action, 0, 0),
    api("follow_lead", ApiKind::Action, 0, 1),
    api("change_lane", ApiKind::Action, 1, 1),
    api("turn", ApiKind::Action, 1, 1),
    api("pull_over", ApiKind::Action, 0, 0),
    api("kmh", ApiKind::Helper, 1, 1),
    api("min", ApiKind::Helper, 2, usize::MAX),
    api("max", ApiKind::Helper, 2, usize::MAX),
    api("abs", ApiKind::Helper, 1, 1),
];

/// Named constants usable as direction arguments.
pub const CONSTANTS: [&str; 3] = ["left", "right", "straight"];

pub fn lookup(name: &str) -> Option<&'static ApiEntry> {
    API.iter().find(|a| a.name == name)
}

/// Default time headway of `follow_lead()` without an argument.
pub const DEFAULT_HEADWAY: f64 = 1.5;

/// Behavior requested by one `yield`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ActionIntent {
    Proceed { speed: f64 },
    Stop,
    FollowLead { headway: f64 },
    ChangeLane { direction: Direction },
    Turn { direction: Direction },
    PullOver,
}

impl ActionIntent {
    /// Seconds after which the executor gives up waiting for completion.
    pub fn timeout(&self) -> f64 {
        match self {
            ActionIntent::Proceed { .. } => 10.0,
            ActionIntent::Stop => 15.0,
            ActionIntent::FollowLead { .. } => 8.0,
            ActionIntent::ChangeLane { .. } => 10.0,
            ActionIntent::Turn { .. } => 40.0,
            ActionIntent::PullOver => 30.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ActionIntent::Proceed { .. } => "proceed",
            ActionIntent::Stop => "stop",
            ActionIntent::FollowLead { .. } => "follow_lead",
            ActionIntent::ChangeLane { .. } => "change_lane",
            ActionIntent::Turn { .. } => "turn",
            ActionIntent::PullOver => "pull_over",
        }
    }
}

impl fmt::Display for ActionIntent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionIntent::Proceed { speed } => write!(f, "proceed({speed:.2})"),
            ActionIntent::FollowLead { headway } => write!(f, "follow_lead({headway:.2})"),
            ActionIntent::ChangeLane { direction } => write!(f, "change_lane({direction})"),
            ActionIntent::Turn { direction } => write!(f, "turn({direction})"),
            other => write!(f, "{}()", other.name()),
        }
    }
}

#[cfg(test)]
mod tests;

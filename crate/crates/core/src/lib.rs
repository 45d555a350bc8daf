//! Closed-loop benchmark rig for instruction-following driving agents.

// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod control;
pub mod dsl;
pub mod evaluator;
pub mod executor;
pub mod harness;
pub mod memory;
pub mod route;
pub mod scenario;
pub mod session;
pub mod sim;
pub mod traffic;

pub use control::{ActionMatrix, ParameterTable};
pub use route::RouteSpec;
pub use sim::{ContextSnapshot, RunTrace, VehicleId, WorldState};

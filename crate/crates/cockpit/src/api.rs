//! Wire schemas shared by the REST routes, the frame stream and clients.

use serde::{Deserialize, Serialize};

use drivelm_core::scenario::{Category, Scenario};
use drivelm_core::session::{SessionEvent, SessionFrame, SessionReport};

pub const API_VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub version: String,
    pub backend: String,
}

/// Body of `POST /v1/sessions`. Without an explicit scenario one is generated
/// from `seed` and `category`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub user: String,
    #[serde(default)]
    pub scenario: Option<Scenario>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub category: Option<Category>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub id: String,
    pub scenario: Scenario,
    pub frame: SessionFrame,
}

/// Full session view; enough for a client to rebuild its screen after a reload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub user: String,
    pub scenario: Scenario,
    pub frame: SessionFrame,
    pub log: Vec<SessionEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandBody {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackBody {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepBody {
    #[serde(default = "one")]
    pub ticks: u64,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedBody {
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CommandReply {
    Dispatched { seq: u64 },
    Queued,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackReply {
    /// Memory record the feedback was attached to; absent when there was no exchange.
    pub record: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReply {
    pub mode: drivelm_core::session::Mode,
    pub takeovers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

/// Messages a client may send on the frame stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Command { text: String },
    Takeover,
    Release,
    ManualSpeed { speed: f64 },
    Feedback { text: String },
    Step { ticks: u64 },
    State,
    Report,
    /// Ends the trip and commits it to memory; answered with a report.
    Finish,
}

/// Messages the service sends on the frame stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Frame { frame: Box<SessionFrame> },
    Command { reply: CommandReply },
    Mode { reply: ModeReply },
    Feedback { reply: FeedbackReply },
    State { state: Box<SessionState> },
    Report { report: Box<SessionReport> },
    Error { error: String },
}

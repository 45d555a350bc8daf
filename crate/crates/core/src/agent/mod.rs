//! Prompt assembly, language-model backends and response parsing.
//!
//! A prompt is rendered from the system message S, worked examples, the
//! retrieved history H, the situation descriptor C, the instruction I and,
//! when regenerating, the driver's feedback F. Responses carry a thought and
//! either a driving program in a fenced block or six labeled controller
//! parameters.

mod backend;

pub use backend::{
    complete, Backend, Completion, RecordingBackend, RemoteBackend, RemoteConfig, ReplayBackend, ScriptRule,
    ScriptedBackend, PatternSyntax, TranscriptEntry,
};

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::sync::OnceLock;
use thiserror::Error;

use crate::control::ActionMatrix;
use crate::scenario::Directness;
use crate::sim::{describe_scene, ContextSnapshot};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("format rejection: {0}")]
    Format(String),
    #[error("response contains both a program and a parameter matrix")]
    Ambiguous,
    #[error("no recorded response for prompt hash {hash}")]
    ReplayMiss { hash: String },
    #[error("no scripted rule matches instruction '{0}'")]
    NoRule(String),
    #[error("backend timed out after {0} s")]
    Timeout(f64),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("prompt of {len} characters exceeds the budget of {budget}")]
    PromptTooLong { len: usize, budget: usize },
    #[error("configuration error: {0}")]
    Config(String),
}

const SYSTEM_MESSAGE: &str = include_str!("../../assets/system_message.txt");
const EXEMPLARS: &str = include_str!("../../assets/exemplars.yaml");
/// Reference responses for the generated instruction templates.
pub const ORACLE_RULES: &str = include_str!("../../assets/oracle_rules.yaml");

/// Heading of the history block.
pub const HISTORY_HEADING: &str = "Earlier commands, the actions taken and the driver's feedback:";
/// Heading of the regeneration feedback block.
pub const FEEDBACK_HEADING: &str = "The driver was not satisfied with your last answer and said:";
/// Default prompt budget in characters.
pub const DEFAULT_BUDGET: usize = 12_000;

/// One worked example shown before the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub query: String,
    pub thought: String,
    pub output: String,
}

/// One retrieved memory entry as shown to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub command: String,
    pub action: String,
    pub feedback: Option<String>,
    /// Recency key; larger is newer.
    pub timestamp: u64,
}

/// System message and examples; hashed so results can cite the exact text.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    pub system: String,
    pub exemplars: Vec<Exemplar>,
    pub budget: usize,
}

impl PromptTemplates {
    pub fn builtin() -> Self {
        PromptTemplates {
            system: SYSTEM_MESSAGE.trim_end().to_string(),
            exemplars: serde_yaml::from_str(EXEMPLARS).expect("bundled exemplars parse"),
            budget: DEFAULT_BUDGET,
        }
    }

    /// Keeps only the first `shots` examples.
    pub fn with_shots(mut self, shots: usize) -> Self {
        self.exemplars.truncate(shots);
        self
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.system.as_bytes());
        for e in &self.exemplars {
            for part in [&e.query, &e.thought, &e.output] {
                h.update([0u8]);
                h.update(part.as_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub exemplars: Vec<Exemplar>,
    pub history: Vec<HistoryEntry>,
    pub context: String,
    pub instruction: String,
    pub directness: Option<Directness>,
    pub feedback: Option<String>,
    /// History entries dropped to fit the budget.
    pub trimmed: usize,
}

impl PromptBundle {
    /// Everything after the system message.
    pub fn user_text(&self) -> String {
        let mut parts = Vec::new();
        if !self.exemplars.is_empty() {
            let mut s = String::from("Here are some examples of commands and answers.");
            for e in &self.exemplars {
                s.push_str(&format!("\n\nCommand: {}\n{}", e.query, render_response(&e.thought, &e.output)));
            }
            parts.push(s);
        }
        if !self.history.is_empty() {
            let mut s = String::from(HISTORY_HEADING);
            for h in &self.history {
                s.push_str(&format!("\nCommand: {}\nAction: {}", h.command, h.action.trim_end()));
                if let Some(f) = &h.feedback {
                    s.push_str(&format!("\nFeedback: {f}"));
                }
            }
            parts.push(s);
        }
        parts.push(format!("Current situation:\n{}", self.context));
        let tag = self.directness.map(|d| format!(" ({d})")).unwrap_or_default();
        parts.push(format!("Command{tag}: {}", self.instruction));
        if let Some(f) = &self.feedback {
            parts.push(format!("{FEEDBACK_HEADING}\n{f}"));
        }
        parts.join("\n\n")
    }

    pub fn render(&self) -> String {
        format!("{}\n\n{}", self.system, self.user_text())
    }

    /// Key under which replay transcripts store the response to this prompt.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.render().as_bytes()))
    }
}

/// Assembles the prompt. History is shown in the order given; when the
/// rendered text exceeds the budget the oldest entries are dropped first.
pub fn build_prompt(
    templates: &PromptTemplates,
    snapshot: &ContextSnapshot,
    instruction: &str,
    history: &[HistoryEntry],
    directness: Option<Directness>,
    feedback: Option<&str>,
) -> Result<PromptBundle, AgentError> {
    if templates.system.trim().is_empty() {
        return Err(AgentError::Config("empty system message".into()));
    }
    let mut bundle = PromptBundle {
        system: templates.system.clone(),
        exemplars: templates.exemplars.clone(),
        history: history.to_vec(),
        context: describe_scene(snapshot),
        instruction: instruction.to_string(),
        directness,
        feedback: feedback.map(str::to_string),
        trimmed: 0,
    };
    loop {
        let len = bundle.render().chars().count();
        if len <= templates.budget {
            return Ok(bundle);
        }
        let Some(oldest) = bundle
            .history
            .iter()
            .enumerate()
            .min_by_key(|(i, h)| (h.timestamp, *i))
            .map(|(i, _)| i)
        else {
            return Err(AgentError::PromptTooLong { len, budget: templates.budget });
        };
        bundle.history.remove(oldest);
        bundle.trimmed += 1;
    }
}

/// What the model asked the car to do.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum PolicyOutput {
    Program(String),
    Matrix(ActionMatrix),
}

impl PolicyOutput {
    /// Text stored in memory and shown as the action of a history entry.
    pub fn text(&self) -> String {
        match self {
            PolicyOutput::Program(p) => p.clone(),
            PolicyOutput::Matrix(m) => m.render(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub thought: String,
    pub output: PolicyOutput,
}

fn fence_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)```[A-Za-z0-9_-]*[ \t]*\r?\n(.*?)```").expect("valid regex"))
}

fn thought_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)Thought:[ \t]*(.*?)(?:```|\n[ \t]*K_p\s*[:=]|\z)").expect("valid regex"))
}

fn label_re(label: &str) -> Regex {
    Regex::new(&format!(r"(?m)^[ \t]*{label}[ \t]*[:=][ \t]*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)"))
        .expect("valid regex")
}

fn matrix_res() -> &'static [Regex; 6] {
    static RE: OnceLock<[Regex; 6]> = OnceLock::new();
    RE.get_or_init(|| ActionMatrix::LABELS.map(label_re))
}

/// Splits a completion into its thought and its program or matrix.
pub fn parse_response(raw: &str) -> Result<ParsedResponse, AgentError> {
    let thought = thought_re()
        .captures(raw)
        .map(|c| c[1].trim().to_string())
        .unwrap_or_default();
    let program = fence_re().captures(raw).map(|c| c[1].to_string());

    // labels are only looked for outside code blocks
    let outside = fence_re().replace_all(raw, "");
    let found: Vec<Option<f64>> = matrix_res()
        .iter()
        .map(|re| re.captures(&outside).and_then(|c| c[1].parse().ok()))
        .collect();
    let labeled = found.iter().filter(|v| v.is_some()).count();
    let matrix = match labeled {
        0 => None,
        6 => Some(ActionMatrix::from_array(std::array::from_fn(|i| found[i].expect("all present")))),
        n => return Err(AgentError::Format(format!("parameter matrix has {n} of 6 labeled values"))),
    };

    match (program, matrix) {
        (Some(_), Some(_)) => Err(AgentError::Ambiguous),
        (Some(p), None) => Ok(ParsedResponse { thought, output: PolicyOutput::Program(p) }),
        (None, Some(m)) => Ok(ParsedResponse { thought, output: PolicyOutput::Matrix(m) }),
        (None, None) => Err(AgentError::Format("no fenced program or parameter matrix in the response".into())),
    }
}

/// Renders a response in the dialect `parse_response` reads.
pub fn render_response(thought: &str, output: &str) -> String {
    format!("Thought: {}\n```lmp\n{}\n```", thought.trim(), output.trim_end())
}

pub fn render_matrix_response(thought: &str, m: &ActionMatrix) -> String {
    format!("Thought: {}\n{}", thought.trim(), m.render())
}

/// One round trip to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentExchange {
    pub instruction: String,
    pub prompt: String,
    pub prompt_hash: String,
    pub backend: String,
    pub raw: String,
    pub thought: Option<String>,
    pub output: Option<PolicyOutput>,
    /// Seconds spent in the transport call.
    pub latency: f64,
    pub error: Option<String>,
}

/// Completes and parses; failures are recorded on the exchange.
pub fn exchange(backend: &dyn Backend, bundle: &PromptBundle) -> AgentExchange {
    let mut ex = AgentExchange {
        instruction: bundle.instruction.clone(),
        prompt: bundle.render(),
        prompt_hash: bundle.hash(),
        backend: backend.id(),
        raw: String::new(),
        thought: None,
        output: None,
        latency: 0.0,
        error: None,
    };
    match complete(backend, bundle) {
        Ok(c) => {
            ex.raw = c.text;
            ex.latency = c.latency;
            match parse_response(&ex.raw) {
                Ok(p) => {
                    ex.thought = Some(p.thought);
                    ex.output = Some(p.output);
                }
                Err(e) => ex.error = Some(e.to_string()),
            }
        }
        Err(e) => ex.error = Some(e.to_string()),
    }
    ex
}

#[cfg(test)]
mod tests;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use super::{AgentError, PromptBundle};

/// Source of completions.
pub trait Backend: Send + Sync {
    fn id(&self) -> String;
    fn transport(&self, bundle: &PromptBundle) -> Result<String, AgentError>;
    /// Deterministic backends report zero latency so runs stay byte-identical.
    fn deterministic(&self) -> bool {
        false
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn transport(&self, bundle: &PromptBundle) -> Result<String, AgentError> {
        (**self).transport(bundle)
    }

    fn deterministic(&self) -> bool {
        (**self).deterministic()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub latency: f64,
}

/// Runs the transport and times it.
pub fn complete(backend: &dyn Backend, bundle: &PromptBundle) -> Result<Completion, AgentError> {
    let start = Instant::now();
    let text = backend.transport(bundle)?;
    let latency = if backend.deterministic() { 0.0 } else { start.elapsed().as_secs_f64() };
    Ok(Completion { text, latency })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternSyntax {
    #[default]
    Regex,
    /// `*` and `?` wildcards over the whole instruction, case-insensitive.
    Glob,
}

/// Canned response for instructions matching `pattern`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub pattern: String,
    #[serde(default)]
    pub syntax: PatternSyntax,
    /// When set, the rule only applies to regenerations whose feedback matches.
    #[serde(default)]
    pub feedback: Option<String>,
    pub response: String,
}

fn glob_to_regex(glob: &str) -> String {
    let mut re = String::from("(?i)^");
    for c in glob.chars() {
        match c {
            '*' => re.push_str(".*"),
            '?' => re.push('.'),
            c => re.push_str(&regex::escape(&c.to_string())),
        }
    }
    re.push('$');
    re
}

struct CompiledRule {
    rule: ScriptRule,
    pattern: Regex,
    feedback: Option<Regex>,
}

/// Pattern to response table. Rules are tried in order and the first match
/// wins; `${name}` or `$1` in the response expand to captured groups.
pub struct ScriptedBackend {
    name: String,
    rules: Vec<CompiledRule>,
}

impl ScriptedBackend {
    pub fn new(name: impl Into<String>, rules: Vec<ScriptRule>) -> Result<Self, AgentError> {
        let compile = |p: &str| {
            RegexBuilder::new(p).build().map_err(|e| AgentError::Config(format!("bad pattern '{p}': {e}")))
        };
        let rules = rules
            .into_iter()
            .map(|rule| {
                let pattern = match rule.syntax {
                    PatternSyntax::Regex => compile(&rule.pattern)?,
                    PatternSyntax::Glob => compile(&glob_to_regex(&rule.pattern))?,
                };
                let feedback = rule.feedback.as_deref().map(compile).transpose()?;
                Ok(CompiledRule { rule, pattern, feedback })
            })
            .collect::<Result<_, AgentError>>()?;
        Ok(ScriptedBackend { name: name.into(), rules })
    }

    pub fn from_yaml(name: impl Into<String>, text: &str) -> Result<Self, AgentError> {
        let rules: Vec<ScriptRule> = serde_yaml::from_str(text).map_err(|e| AgentError::Config(e.to_string()))?;
        Self::new(name, rules)
    }

    /// Hand-written reference programs for every generated instruction template.
    pub fn oracle() -> Self {
        Self::from_yaml("scripted:oracle", super::ORACLE_RULES).expect("bundled rules parse")
    }

    /// Rules of `other` are tried after these.
    pub fn chain(mut self, other: ScriptedBackend) -> Self {
        self.rules.extend(other.rules);
        self
    }

    pub fn respond(&self, instruction: &str, feedback: Option<&str>) -> Result<String, AgentError> {
        for r in &self.rules {
            let fb_ok = match (&r.feedback, feedback) {
                (None, _) => true,
                (Some(re), Some(f)) => re.is_match(f),
                (Some(_), None) => false,
            };
            if !fb_ok {
                continue;
            }
            if let Some(caps) = r.pattern.captures(instruction) {
                let mut out = String::new();
                caps.expand(&r.rule.response, &mut out);
                return Ok(out);
            }
        }
        Err(AgentError::NoRule(instruction.to_string()))
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> String {
        self.name.clone()
    }

    fn transport(&self, bundle: &PromptBundle) -> Result<String, AgentError> {
        self.respond(&bundle.instruction, bundle.feedback.as_deref())
    }

    fn deterministic(&self) -> bool {
        true
    }
}

/// One recorded round trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub hash: String,
    pub response: String,
}

/// Recorded completions keyed by prompt hash.
pub struct ReplayBackend {
    name: String,
    responses: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn new(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        ReplayBackend {
            name: "replay".into(),
            responses: entries.into_iter().map(|e| (e.hash, e.response)).collect(),
        }
    }

    /// Reads a JSON-lines transcript; later entries override earlier ones.
    pub fn open(path: &Path) -> Result<Self, AgentError> {
        let f = File::open(path).map_err(|e| AgentError::Config(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| AgentError::Config(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let e: TranscriptEntry = serde_json::from_str(&line)
                .map_err(|e| AgentError::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
            entries.push(e);
        }
        let mut b = ReplayBackend::new(entries);
        b.name = format!("replay:{}", path.display());
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl Backend for ReplayBackend {
    fn id(&self) -> String {
        self.name.clone()
    }

    fn transport(&self, bundle: &PromptBundle) -> Result<String, AgentError> {
        let hash = bundle.hash();
        self.responses.get(&hash).cloned().ok_or(AgentError::ReplayMiss { hash })
    }

    fn deterministic(&self) -> bool {
        true
    }
}

/// Appends every successful completion of `inner` to a transcript file.
pub struct RecordingBackend<B> {
    inner: B,
    out: Mutex<File>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B, path: &Path) -> Result<Self, AgentError> {
        let out = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| AgentError::Config(format!("{}: {e}", path.display())))?;
        Ok(RecordingBackend { inner, out: Mutex::new(out) })
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn transport(&self, bundle: &PromptBundle) -> Result<String, AgentError> {
        let response = self.inner.transport(bundle)?;
        let entry = TranscriptEntry { hash: bundle.hash(), response: response.clone() };
        let line = serde_json::to_string(&entry).map_err(|e| AgentError::Backend(e.to_string()))?;
        let mut f = self.out.lock().map_err(|_| AgentError::Backend("transcript lock poisoned".into()))?;
        writeln!(f, "{line}").map_err(|e| AgentError::Backend(e.to_string()))?;
        Ok(response)
    }

    fn deterministic(&self) -> bool {
        self.inner.deterministic()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Full URL of the chat-completion endpoint.
    pub url: String,
    pub model: String,
    /// Environment variable holding the bearer token; unset means no auth header.
    pub key_env: Option<String>,
    pub timeout_secs: f64,
    pub retries: u32,
    /// First retry delay; doubles on every further retry.
    pub backoff_secs: f64,
    pub temperature: f64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            url: "http://localhost:8000/v1/chat/completions".into(),
            model: "gpt-4".into(),
            key_env: Some("OPENAI_API_KEY".into()),
            timeout_secs: 30.0,
            retries: 2,
            backoff_secs: 0.5,
            temperature: 0.0,
        }
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: String,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatReply {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReplyMessage,
}

#[derive(Deserialize)]
struct ChatReplyMessage {
    content: String,
}

/// Hosted chat-completion endpoint.
pub struct RemoteBackend {
    cfg: RemoteConfig,
    client: reqwest::blocking::Client,
}

impl RemoteBackend {
    pub fn new(cfg: RemoteConfig) -> Result<Self, AgentError> {
        if !(cfg.timeout_secs > 0.0) {
            return Err(AgentError::Config("timeout must be positive".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| AgentError::Config(e.to_string()))?;
        Ok(RemoteBackend { cfg, client })
    }

    fn attempt(&self, bundle: &PromptBundle) -> Result<String, AgentError> {
        let body = ChatRequest {
            model: &self.cfg.model,
            messages: vec![
                ChatMessage { role: "system", content: bundle.system.clone() },
                ChatMessage { role: "user", content: bundle.user_text() },
            ],
            temperature: self.cfg.temperature,
        };
        let mut req = self.client.post(&self.cfg.url).json(&body);
        if let Some(token) = self.cfg.key_env.as_deref().and_then(|k| std::env::var(k).ok()) {
            req = req.bearer_auth(token);
        }
        let map = |e: reqwest::Error| {
            if e.is_timeout() {
                AgentError::Timeout(self.cfg.timeout_secs)
            } else {
                AgentError::Backend(e.to_string())
            }
        };
        let resp = req.send().map_err(map)?;
        let status = resp.status();
        if !status.is_success() {
            return Err(AgentError::Backend(format!("HTTP {status}")));
        }
        let reply: ChatReply = resp.json().map_err(|e| AgentError::Backend(format!("malformed reply: {e}")))?;
        reply
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| AgentError::Backend("reply has no choices".into()))
    }
}

impl Backend for RemoteBackend {
    fn id(&self) -> String {
        format!("remote:{}", self.cfg.model)
    }

    fn transport(&self, bundle: &PromptBundle) -> Result<String, AgentError> {
        let mut delay = self.cfg.backoff_secs;
        let mut last = None;
        for attempt in 0..=self.cfg.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_secs_f64(delay));
                delay *= 2.0;
            }
            match self.attempt(bundle) {
                Ok(text) => return Ok(text),
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

//! Per-user personalization memory.
//!
//! Each user has an append-only JSON-lines log of records and feedback
//! updates. Profiles are rebuilt from the logs on open. Retrieval ranks
//! records by cosine similarity of hashed character-trigram embeddings of
//! their instructions.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::agent::HistoryEntry;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("user '{user}' has no record {id}")]
    UnknownRecord { user: String, id: u64 },
    #[error("invalid user id '{0}'")]
    BadUser(String),
    #[error("retrieval needs k >= 1")]
    BadK,
    #[error("{path}:{line}: {message}")]
    Corrupt { path: String, line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Embedding dimension.
pub const EMBED_DIM: usize = 256;
/// Default number of retrieved records.
pub const DEFAULT_K: usize = 3;
/// Version tag written on every log line.
pub const LOG_VERSION: u32 = 1;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Hashed character-trigram embedding, L2-normalized. Text is lowercased,
/// whitespace collapsed and padded with one space on each side. Empty text
/// maps to the zero vector.
pub fn embed(text: &str) -> Vec<f64> {
    let words: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
    let mut v = vec![0.0; EMBED_DIM];
    if words.is_empty() {
        return v;
    }
    let chars: Vec<char> = format!(" {} ", words.join(" ")).chars().collect();
    for w in chars.windows(3) {
        let s: String = w.iter().collect();
        v[(fnv1a(s.as_bytes()) % EMBED_DIM as u64) as usize] += 1.0;
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub id: u64,
    pub user: String,
    pub instruction: String,
    pub scene: Option<String>,
    /// Program text or rendered parameter matrix.
    pub policy: String,
    pub feedback: Option<String>,
    /// Logical clock, strictly increasing within a profile.
    pub timestamp: u64,
    pub embedding: Vec<f64>,
}

impl MemoryRecord {
    pub fn history_entry(&self) -> HistoryEntry {
        HistoryEntry {
            command: self.instruction.clone(),
            action: self.policy.clone(),
            feedback: self.feedback.clone(),
            timestamp: self.timestamp,
        }
    }
}

/// Fields supplied by the caller when recording.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NewRecord {
    pub instruction: String,
    pub scene: Option<String>,
    pub policy: String,
    pub feedback: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user: String,
    pub records: Vec<MemoryRecord>,
    pub k: usize,
}

impl UserProfile {
    pub fn new(user: impl Into<String>) -> Self {
        UserProfile { user: user.into(), records: Vec::new(), k: DEFAULT_K }
    }

    pub fn get(&self, id: u64) -> Option<&MemoryRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    fn next_clock(&self) -> u64 {
        self.records.last().map_or(1, |r| r.timestamp + 1)
    }

    /// Appends a record and returns its id.
    pub fn record(&mut self, new: NewRecord) -> u64 {
        let id = self.records.last().map_or(0, |r| r.id + 1);
        let timestamp = self.next_clock();
        self.records.push(MemoryRecord {
            id,
            user: self.user.clone(),
            embedding: embed(&new.instruction),
            instruction: new.instruction,
            scene: new.scene,
            policy: new.policy,
            feedback: new.feedback,
            timestamp,
        });
        id
    }

    pub fn update_feedback(&mut self, id: u64, feedback: &str) -> Result<(), MemoryError> {
        let user = self.user.clone();
        let r = self
            .records
            .iter_mut()
            .find(|r| r.id == id)
            .ok_or(MemoryError::UnknownRecord { user, id })?;
        r.feedback = Some(feedback.to_string());
        Ok(())
    }

    /// Up to `k` records by descending similarity, newest first on ties.
    pub fn retrieve(&self, instruction: &str, k: usize) -> Result<Vec<(f64, &MemoryRecord)>, MemoryError> {
        if k == 0 {
            return Err(MemoryError::BadK);
        }
        let q = embed(instruction);
        let mut scored: Vec<(f64, &MemoryRecord)> =
            self.records.iter().map(|r| (cosine(&q, &r.embedding), r)).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.timestamp.cmp(&a.1.timestamp)));
        scored.truncate(k);
        Ok(scored)
    }

    /// Retrieved records as prompt history, oldest first.
    pub fn history(&self, instruction: &str, k: usize) -> Result<Vec<HistoryEntry>, MemoryError> {
        let mut hits: Vec<_> = self.retrieve(instruction, k)?.into_iter().map(|(_, r)| r.history_entry()).collect();
        hits.sort_by_key(|h| h.timestamp);
        Ok(hits)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum LogLine {
    Record { v: u32, record: MemoryRecord },
    Feedback { v: u32, id: u64, feedback: String },
}

fn valid_user(user: &str) -> bool {
    !user.is_empty()
        && user.len() <= 64
        && user.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
        && !user.starts_with('.')
}

/// Profiles of all users, optionally backed by a directory of logs.
#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    dir: Option<PathBuf>,
    profiles: BTreeMap<String, UserProfile>,
}

impl MemoryStore {
    pub fn in_memory() -> Self {
        MemoryStore::default()
    }

    /// Opens (creating if needed) a store directory and replays every log.
    pub fn open(dir: &Path) -> Result<Self, MemoryError> {
        fs::create_dir_all(dir)?;
        let mut store = MemoryStore { dir: Some(dir.to_path_buf()), profiles: BTreeMap::new() };
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            let user = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            if !valid_user(&user) {
                continue;
            }
            let profile = read_log(&user, BufReader::new(File::open(&path)?), &path.display().to_string())?;
            store.profiles.insert(user, profile);
        }
        Ok(store)
    }

    pub fn profile(&self, user: &str) -> Option<&UserProfile> {
        self.profiles.get(user)
    }

    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.profiles.keys().map(String::as_str)
    }

    fn append(&self, user: &str, line: &LogLine) -> Result<(), MemoryError> {
        if let Some(dir) = &self.dir {
            let mut f = OpenOptions::new().create(true).append(true).open(dir.join(format!("{user}.jsonl")))?;
            let text = serde_json::to_string(line).map_err(std::io::Error::other)?;
            writeln!(f, "{text}")?;
        }
        Ok(())
    }

    pub fn record(&mut self, user: &str, new: NewRecord) -> Result<u64, MemoryError> {
        if !valid_user(user) {
            return Err(MemoryError::BadUser(user.to_string()));
        }
        let profile = self.profiles.entry(user.to_string()).or_insert_with(|| UserProfile::new(user));
        let id = profile.record(new);
        let rec = profile.get(id).expect("just recorded").clone();
        self.append(user, &LogLine::Record { v: LOG_VERSION, record: rec })?;
        Ok(id)
    }

    pub fn update_feedback(&mut self, user: &str, id: u64, feedback: &str) -> Result<(), MemoryError> {
        let profile = self
            .profiles
            .get_mut(user)
            .ok_or_else(|| MemoryError::UnknownRecord { user: user.to_string(), id })?;
        profile.update_feedback(id, feedback)?;
        self.append(user, &LogLine::Feedback { v: LOG_VERSION, id, feedback: feedback.to_string() })
    }

    pub fn retrieve(&self, user: &str, instruction: &str, k: usize) -> Result<Vec<(f64, &MemoryRecord)>, MemoryError> {
        match self.profiles.get(user) {
            Some(p) => p.retrieve(instruction, k),
            None if k == 0 => Err(MemoryError::BadK),
            None => Ok(Vec::new()),
        }
    }

    pub fn history(&self, user: &str, instruction: &str, k: usize) -> Result<Vec<HistoryEntry>, MemoryError> {
        match self.profiles.get(user) {
            Some(p) => p.history(instruction, k),
            None if k == 0 => Err(MemoryError::BadK),
            None => Ok(Vec::new()),
        }
    }

    /// Current records of `user` as JSON lines.
    pub fn export(&self, user: &str) -> String {
        let mut out = String::new();
        if let Some(p) = self.profiles.get(user) {
            for r in &p.records {
                let line = LogLine::Record { v: LOG_VERSION, record: r.clone() };
                out.push_str(&serde_json::to_string(&line).expect("records serialize"));
                out.push('\n');
            }
        }
        out
    }

    /// Appends exported records to `user`'s profile as new entries.
    pub fn import(&mut self, user: &str, text: &str) -> Result<usize, MemoryError> {
        let source = read_log(user, text.as_bytes(), "import")?;
        let n = source.records.len();
        for r in source.records {
            self.record(
                user,
                NewRecord { instruction: r.instruction, scene: r.scene, policy: r.policy, feedback: r.feedback },
            )?;
        }
        Ok(n)
    }
}

fn read_log<R: BufRead>(user: &str, input: R, name: &str) -> Result<UserProfile, MemoryError> {
    let mut profile = UserProfile::new(user);
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |message: String| MemoryError::Corrupt { path: name.to_string(), line: i + 1, message };
        let parsed: LogLine = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
        match parsed {
            LogLine::Record { v, mut record } => {
                if v != LOG_VERSION {
                    return Err(corrupt(format!("unsupported version {v}")));
                }
                if profile.records.last().is_some_and(|r| r.timestamp >= record.timestamp) {
                    return Err(corrupt("timestamps must increase".into()));
                }
                record.user = user.to_string();
                profile.records.push(record);
            }
            LogLine::Feedback { id, feedback, .. } => {
                profile.update_feedback(id, &feedback).map_err(|e| corrupt(e.to_string()))?;
            }
        }
    }
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(i: &str, p: &str) -> NewRecord {
        NewRecord { instruction: i.into(), scene: None, policy: p.into(), feedback: None }
    }

    /// Trigram multiset cosine computed directly, without hashing.
    fn trigram_cosine(a: &str, b: &str) -> f64 {
        let grams = |s: &str| {
            let chars: Vec<char> = format!(" {} ", s.to_lowercase()).chars().collect();
            let mut m: BTreeMap<String, f64> = BTreeMap::new();
            for w in chars.windows(3) {
                *m.entry(w.iter().collect()).or_default() += 1.0;
            }
            m
        };
        let (ga, gb) = (grams(a), grams(b));
        let dot: f64 = ga.iter().map(|(k, v)| v * gb.get(k).copied().unwrap_or(0.0)).sum();
        let n = |m: &BTreeMap<String, f64>| m.values().map(|v| v * v).sum::<f64>().sqrt();
        dot / (n(&ga) * n(&gb))
    }

    #[test]
    fn embedding_basics() {
        let a = embed("drive faster please");
        assert_eq!(a, embed("drive faster please"));
        assert_eq!(a.len(), EMBED_DIM);
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((cosine(&a, &a) - 1.0).abs() < 1e-9);
        assert_eq!(cosine(&embed(""), &a), 0.0);
        assert!(embed("   ").iter().all(|x| *x == 0.0));
    }

    #[test]
    fn word_order_similarity_beats_unrelated() {
        let a = embed("drive faster please");
        let near = cosine(&a, &embed("please drive faster"));
        let far = cosine(&a, &embed("turn left ahead"));
        let (near_ref, far_ref) =
            (trigram_cosine("drive faster please", "please drive faster"), trigram_cosine("drive faster please", "turn left ahead"));
        assert!(near_ref > far_ref);
        assert!(near > far, "{near} vs {far}");
        // hashing only merges buckets, so it can raise similarity but never lower it
        assert!(near >= near_ref - 1e-12);
    }

    #[test]
    fn record_read_back_and_feedback() {
        let mut p = UserProfile::new("u1");
        let id = p.record(rec("Drive at 60 km/h.", "def p():\n    yield proceed(kmh(60))"));
        assert_eq!(p.get(id).unwrap().instruction, "Drive at 60 km/h.");
        p.update_feedback(id, "A little bit too fast.").unwrap();
        let r = p.get(id).unwrap();
        assert_eq!(r.feedback.as_deref(), Some("A little bit too fast."));
        assert_eq!(r.policy, "def p():\n    yield proceed(kmh(60))");
        assert!(matches!(p.update_feedback(99, "x"), Err(MemoryError::UnknownRecord { id: 99, .. })));
    }

    #[test]
    fn retrieval_ranking() {
        let mut p = UserProfile::new("u");
        p.record(rec("turn left ahead", "a"));
        p.record(rec("overtake the car", "b"));
        p.record(rec("overtake the car", "c"));
        let hits = p.retrieve("overtake the car", 3).unwrap();
        assert!((hits[0].0 - 1.0).abs() < 1e-9);
        // equal similarity resolves to the newer record
        assert_eq!(hits[0].1.policy, "c");
        assert_eq!(hits[1].1.policy, "b");
        assert_eq!(p.retrieve("x", 10).unwrap().len(), 3);
        assert!(p.retrieve("x", 0).is_err());
        assert!(UserProfile::new("e").retrieve("x", 3).unwrap().is_empty());
    }

    #[test]
    fn persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = MemoryStore::open(dir.path()).unwrap();
        let a = s.record("alice", rec("go faster", "p1")).unwrap();
        s.record("bob", rec("go slower", "p2")).unwrap();
        s.update_feedback("alice", a, "Too fast.").unwrap();
        s.record("alice", rec("pull over", "p3")).unwrap();
        let reopened = MemoryStore::open(dir.path()).unwrap();
        assert_eq!(reopened.profile("alice"), s.profile("alice"));
        assert_eq!(reopened.profile("bob"), s.profile("bob"));
        assert!(s.record("../x", rec("a", "b")).is_err());
    }

    #[test]
    fn export_import() {
        let mut s = MemoryStore::in_memory();
        s.record("a", rec("one", "p")).unwrap();
        s.record("a", rec("two", "q")).unwrap();
        let text = s.export("a");
        let mut t = MemoryStore::in_memory();
        assert_eq!(t.import("b", &text).unwrap(), 2);
        let b = t.profile("b").unwrap();
        assert_eq!(b.records.len(), 2);
        assert_eq!(b.records[1].instruction, "two");
        assert_eq!(b.records[1].user, "b");
    }

    proptest! {
        #[test]
        fn retrieval_stays_within_user(ops in prop::collection::vec((0..3usize, "[a-z ]{1,20}"), 1..40), q in "[a-z ]{1,20}") {
            let users = ["u0", "u1", "u2"];
            let mut s = MemoryStore::in_memory();
            for (u, text) in &ops {
                s.record(users[*u], rec(text, users[*u])).unwrap();
            }
            for u in users {
                for (_, r) in s.retrieve(u, &q, 100).unwrap() {
                    prop_assert_eq!(&r.user, u);
                    prop_assert_eq!(&r.policy, u);
                }
                let n = ops.iter().filter(|(i, _)| users[*i] == u).count();
                prop_assert_eq!(s.retrieve(u, &q, 100).unwrap().len(), n);
            }
        }

        #[test]
        fn similarity_symmetric_and_bounded(a in ".{0,30}", b in ".{0,30}") {
            let (ea, eb) = (embed(&a), embed(&b));
            let ab = cosine(&ea, &eb);
            prop_assert!((ab - cosine(&eb, &ea)).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&ab));
            let n: f64 = ea.iter().map(|x| x * x).sum();
            prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-6);
        }
    }
}

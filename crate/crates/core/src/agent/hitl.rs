use std::collections::{BTreeMap, VecDeque};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::script::parse_script;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitlMode {
    #[default]
    Off,
    PauseBeforeRun,
    PauseEachStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PausePoint {
    BeforeRun,
    AfterEvaluation,
}

impl HitlMode {
    pub fn pauses_at(self, point: PausePoint) -> bool {
        match self {
            HitlMode::Off => false,
            HitlMode::PauseBeforeRun => point == PausePoint::BeforeRun,
            HitlMode::PauseEachStep => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PauseInfo {
    pub point: PausePoint,
    pub iteration: usize,
    pub script: String,
}

/// Edits carried by a resume. An empty message means "carry on".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResumeMessage {
    #[serde(default, alias = "edited_script", skip_serializing_if = "Option::is_none")]
    pub script: Option<String>,
    #[serde(default, alias = "parameter_patch", skip_serializing_if = "BTreeMap::is_empty")]
    pub parameters: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directive: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub abort: bool,
}

impl ResumeMessage {
    pub fn approve() -> Self {
        Self::default()
    }

    pub fn is_noop(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckpointError {
    #[error("no resume arrived before the session deadline")]
    Timeout,
    #[error("checkpoint closed")]
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("session is not paused")]
pub struct NotPaused;

/// Where a paused session waits for its resume message.
pub trait Checkpoint: Send + Sync {
    /// Blocks until a resume arrives or `deadline` passes.
    fn wait(&self, pause: &PauseInfo, deadline: Option<Instant>) -> Result<ResumeMessage, CheckpointError>;
}

/// Pre-scripted resumes, consumed in order; approves once exhausted.
#[derive(Debug, Default)]
pub struct QueueCheckpoint {
    queue: Mutex<VecDeque<ResumeMessage>>,
    seen: Mutex<Vec<PauseInfo>>,
}

impl QueueCheckpoint {
    pub fn new(messages: impl IntoIterator<Item = ResumeMessage>) -> Self {
        Self { queue: Mutex::new(messages.into_iter().collect()), seen: Mutex::default() }
    }

    /// Every pause observed so far.
    pub fn pauses(&self) -> Vec<PauseInfo> {
        self.seen.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl Checkpoint for QueueCheckpoint {
    fn wait(&self, pause: &PauseInfo, _deadline: Option<Instant>) -> Result<ResumeMessage, CheckpointError> {
        self.seen.lock().unwrap_or_else(|e| e.into_inner()).push(pause.clone());
        Ok(self.queue.lock().unwrap_or_else(|e| e.into_inner()).pop_front().unwrap_or_default())
    }
}

#[derive(Default)]
struct Slot {
    paused: Option<PauseInfo>,
    pending: Option<ResumeMessage>,
    closed: bool,
}

/// Checkpoint fed from outside (the HTTP service): the session blocks in
/// [`wait`](Checkpoint::wait) and [`resume`](Self::resume) releases it.
#[derive(Default)]
pub struct ChannelCheckpoint {
    slot: Mutex<Slot>,
    cond: Condvar,
}

impl std::fmt::Debug for ChannelCheckpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChannelCheckpoint").field("paused", &self.paused()).finish()
    }
}

impl ChannelCheckpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn paused(&self) -> Option<PauseInfo> {
        self.slot.lock().unwrap_or_else(|e| e.into_inner()).paused.clone()
    }

    pub fn is_paused(&self) -> bool {
        self.paused().is_some()
    }

    /// Delivers `msg` to the waiting session. Fails unless the session is
    /// paused and no resume is pending yet.
    pub fn resume(&self, msg: ResumeMessage) -> Result<(), NotPaused> {
        let mut slot = self.slot.lock().unwrap_or_else(|e| e.into_inner());
        if slot.paused.is_none() || slot.pending.is_some() {
            return Err(NotPaused);
        }
        slot.pending = Some(msg);
        drop(slot);
        self.cond.notify_all();
        Ok(())
    }

    /// Wakes any waiter with [`CheckpointError::Closed`].
    pub fn close(&self) {
        self.slot.lock().unwrap_or_else(|e| e.into_inner()).closed = true;
        self.cond.notify_all();
    }
}

impl Checkpoint for ChannelCheckpoint {
    fn wait(&self, pause: &PauseInfo, deadline: Option<Instant>) -> Result<ResumeMessage, CheckpointError> {
        let mut slot = self.slot.lock().unwrap_or_else(|e| e.into_inner());
        slot.paused = Some(pause.clone());
        slot.pending = None;
        let outcome = loop {
            if let Some(msg) = slot.pending.take() {
                break Ok(msg);
            }
            if slot.closed {
                break Err(CheckpointError::Closed);
            }
            let wait = match deadline {
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        break Err(CheckpointError::Timeout);
                    }
                    d - now
                }
                None => Duration::from_secs(3600),
            };
            slot = self.cond.wait_timeout(slot, wait).unwrap_or_else(|e| e.into_inner()).0;
        };
        slot.paused = None;
        outcome
    }
}

/// Applies parameter edits: `variable NAME style VALUE` lines get the new
/// value, otherwise the single command named NAME gets NAME as its new
/// argument list. Returns the new script and the keys that matched nothing.
pub fn apply_parameters(script: &str, params: &BTreeMap<String, String>) -> (String, Vec<String>) {
    if params.is_empty() {
        return (script.to_string(), Vec::new());
    }
    let doc = parse_script(script);
    let mut lines: Vec<String> = script.lines().map(str::to_string).collect();
    let mut unmatched = Vec::new();
    for (key, value) in params {
        let var = doc.commands.iter().find(|c| c.name == "variable" && c.arg(0) == Some(key.as_str()));
        let target = match var {
            Some(c) => Some((c.line, format!("variable {key} {} {value}", c.arg(1).unwrap_or("equal")))),
            None => {
                let mut named = doc.commands.iter().filter(|c| c.name == *key);
                match (named.next(), named.next()) {
                    (Some(c), None) => Some((c.line, format!("{key} {value}"))),
                    _ => None,
                }
            }
        };
        match target {
            Some((line, text)) if line >= 1 && line <= lines.len() => lines[line - 1] = text,
            _ => unmatched.push(key.clone()),
        }
    }
    let mut out = lines.join("\n");
    if script.ends_with('\n') {
        out.push('\n');
    }
    (out, unmatched)
}

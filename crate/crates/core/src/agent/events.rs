use std::fs::File;
use std::io::Write as _;
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Generator,
    Runner,
    Evaluator,
    Hitl,
    Terminal,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Generator => "generator",
            Stage::Runner => "runner",
            Stage::Evaluator => "evaluator",
            Stage::Hitl => "hitl",
            Stage::Terminal => "terminal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub stage: Stage,
    pub payload: Value,
    /// Milliseconds since the Unix epoch.
    pub ts_ms: u64,
}

impl SessionEvent {
    /// The event as JSON with the timestamp removed, for comparisons.
    pub fn without_timestamp(&self) -> Value {
        serde_json::json!({ "seq": self.seq, "stage": self.stage, "payload": self.payload })
    }
}

#[derive(Default)]
struct State {
    events: Vec<SessionEvent>,
    closed: bool,
}

/// Append-only, single-producer multi-consumer event stream of a session.
/// Optionally mirrored to a JSON-lines file.
#[derive(Default)]
pub struct EventLog {
    state: Mutex<State>,
    cond: Condvar,
    file: Option<Mutex<File>>,
}

impl std::fmt::Debug for EventLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventLog").field("len", &self.len()).finish()
    }
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_file(path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = File::create(path)?;
        Ok(Self { file: Some(Mutex::new(file)), ..Self::default() })
    }

    /// Appends an event and wakes waiting readers. Returns its sequence
    /// number (1-based).
    pub fn emit(&self, stage: Stage, payload: Value) -> u64 {
        let ts_ms = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64);
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let seq = state.events.len() as u64 + 1;
        let event = SessionEvent { seq, stage, payload, ts_ms };
        if let Some(file) = &self.file {
            let line = serde_json::to_string(&event).expect("event serializes");
            if let Ok(mut f) = file.lock() {
                let _ = writeln!(f, "{line}");
            }
        }
        state.events.push(event);
        if stage == Stage::Terminal {
            state.closed = true;
        }
        drop(state);
        self.cond.notify_all();
        seq
    }

    pub fn len(&self) -> usize {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True once the terminal event was emitted.
    pub fn is_closed(&self) -> bool {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).closed
    }

    pub fn snapshot(&self) -> Vec<SessionEvent> {
        self.since(0)
    }

    /// Events with `seq > after`.
    pub fn since(&self, after: u64) -> Vec<SessionEvent> {
        let state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        state.events.iter().skip(after as usize).cloned().collect()
    }

    /// Like [`since`](Self::since) but blocks up to `timeout` for at least
    /// one new event, returning early when the stream is closed.
    pub fn wait_since(&self, after: u64, timeout: Duration) -> Vec<SessionEvent> {
        let deadline = Instant::now() + timeout;
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        while state.events.len() as u64 <= after && !state.closed {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            state = self.cond.wait_timeout(state, deadline - now).unwrap_or_else(|e| e.into_inner()).0;
        }
        state.events.iter().skip(after as usize).cloned().collect()
    }
}

/// Checks a stage sequence against
/// `(generator+ hitl* runner evaluator hitl*)* terminal`, with an aborted
/// session allowed to end after any stage.
pub fn stages_well_formed(stages: &[Stage], aborted: bool) -> bool {
    let Some((last, body)) = stages.split_last() else { return false };
    if *last != Stage::Terminal {
        return false;
    }
    #[derive(PartialEq)]
    enum S {
        Start,
        Gen,
        GenHitl,
        Run,
        Eval,
    }
    let mut s = S::Start;
    for st in body {
        s = match (s, st) {
            (S::Start | S::Eval, Stage::Generator) | (S::Gen, Stage::Generator) => S::Gen,
            (S::Gen | S::GenHitl, Stage::Hitl) => S::GenHitl,
            (S::Gen | S::GenHitl, Stage::Runner) => S::Run,
            (S::Run, Stage::Evaluator) => S::Eval,
            (S::Eval, Stage::Hitl) => S::Eval,
            _ => return false,
        };
    }
    aborted || matches!(s, S::Start | S::Eval)
}

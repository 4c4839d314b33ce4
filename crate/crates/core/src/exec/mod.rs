//! Sandboxed execution of input scripts, the executability probe and run
//! summaries.

mod classify;
mod stub;
mod subprocess;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::potentials::RegistryHandle;
use crate::script::{parse_script, DiagCode, Diagnostic, ScriptDocument};
use crate::thermo::{evaluate_rules, AnomalyFlag, SimType, ThermoSeries, ToleranceConfig};
use crate::util::Semaphore;

pub use classify::{classify, error_excerpt, EXCERPT_LIMIT};
pub use stub::{CannedRun, StubRunner, StubSettings};
pub use subprocess::SubprocessRunner;

pub const INPUT_FILE: &str = "in.lammps";
pub const LOG_FILE: &str = "log.lammps";
pub const STDOUT_FILE: &str = "stdout.txt";
pub const STDERR_FILE: &str = "stderr.txt";
pub const PROFILE_ENV: &str = "MDFORGE_RUNNER_PROFILE";

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error("sandbox wrapper `{0}` is not available")]
    SandboxUnavailable(String),
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error("script is empty")]
    EmptyScript,
    #[error("i/o error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl ExecError {
    pub fn code(&self) -> &'static str {
        match self {
            ExecError::SandboxUnavailable(_) => "SANDBOX_UNAVAILABLE",
            ExecError::InvalidConfig(_) => "INVALID_CONFIG",
            ExecError::EmptyScript => "EMPTY_SCRIPT",
            ExecError::Io { .. } => "IO_ERROR",
        }
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExecError + '_ {
    move |source| ExecError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunnerProfile {
    Real,
    #[default]
    Stub,
}

impl RunnerProfile {
    /// Reads `MDFORGE_RUNNER_PROFILE`; unset or unrecognized values yield `None`.
    pub fn from_env() -> Option<Self> {
        match std::env::var(PROFILE_ENV).ok()?.trim().to_ascii_lowercase().as_str() {
            "real" => Some(RunnerProfile::Real),
            "stub" => Some(RunnerProfile::Stub),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Argument vector with `{input}`, `{logfile}` and `{workdir}` placeholders.
    pub command_template: Vec<String>,
    /// Optional wrapper (e.g. a container invocation). The `{command}` token
    /// is replaced by the expanded command; other placeholders are expanded.
    pub sandbox_template: Option<Vec<String>>,
    pub timeout_s: f64,
    pub probe_timeout_s: f64,
    pub workdir_root: PathBuf,
    /// Maximum concurrent executions.
    pub parallelism: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command_template: ["lmp", "-in", "{input}", "-log", "{logfile}"].map(String::from).to_vec(),
            sandbox_template: None,
            timeout_s: 1800.0,
            probe_timeout_s: 20.0,
            workdir_root: std::env::temp_dir().join("mdforge-runs"),
            parallelism: 4,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ExecError> {
        let bad = |m: &str| Err(ExecError::InvalidConfig(m.into()));
        if !(self.probe_timeout_s > 0.0 && self.timeout_s > self.probe_timeout_s) {
            return bad("timeouts must satisfy timeout_s > probe_timeout_s > 0");
        }
        if !self.command_template.iter().any(|t| t.contains("{input}")) {
            return bad("command_template must contain {input}");
        }
        if let Some(sandbox) = &self.sandbox_template {
            if sandbox.is_empty() || !sandbox.iter().any(|t| t == "{command}" || t.contains("{input}")) {
                return bad("sandbox_template must contain {command} or {input}");
            }
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Success,
    RuntimeError,
    Timeout,
    LaunchFailure,
}

impl fmt::Display for ExecStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExecStatus::Success => "success",
            ExecStatus::RuntimeError => "runtime_error",
            ExecStatus::Timeout => "timeout",
            ExecStatus::LaunchFailure => "launch_failure",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    None,
    LostAtoms,
    UnknownCommand,
    MissingFile,
    NumericFailure,
    Other,
}

impl ErrorClass {
    pub fn diag_code(self) -> Option<DiagCode> {
        match self {
            ErrorClass::None => None,
            ErrorClass::LostAtoms => Some(DiagCode::LostAtoms),
            ErrorClass::UnknownCommand => Some(DiagCode::UnknownCommand),
            ErrorClass::MissingFile => Some(DiagCode::MissingFile),
            ErrorClass::NumericFailure => Some(DiagCode::NumericFailure),
            ErrorClass::Other => Some(DiagCode::RuntimeError),
        }
    }
}

/// Files produced by a run. All paths are inside the run's workdir.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArtifactSet {
    pub log_file: Option<PathBuf>,
    pub dump_files: Vec<PathBuf>,
    pub data_files: Vec<PathBuf>,
    pub other: Vec<PathBuf>,
}

impl ArtifactSet {
    pub fn all(&self) -> impl Iterator<Item = &PathBuf> {
        self.log_file.iter().chain(&self.dump_files).chain(&self.data_files).chain(&self.other)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub status: ExecStatus,
    pub exit_code: Option<i32>,
    pub wall_time_s: f64,
    pub workdir: PathBuf,
    pub stdout_path: PathBuf,
    pub stderr_path: PathBuf,
    pub error_class: ErrorClass,
    /// At most [`EXCERPT_LIMIT`] characters; non-empty unless successful.
    pub error_excerpt: String,
    pub artifacts: ArtifactSet,
}

impl ExecutionResult {
    pub fn log_text(&self) -> Option<String> {
        self.artifacts.log_file.as_ref().and_then(|p| std::fs::read_to_string(p).ok())
    }

    pub fn thermo(&self) -> Option<ThermoSeries> {
        crate::thermo::parse_thermo(&self.log_text()?).ok()
    }
}

/// What a backend reports about one process run; the executor turns it into
/// an [`ExecutionResult`].
#[derive(Debug, Clone, PartialEq)]
pub struct RawOutcome {
    /// `None` when the process never started.
    pub exit_code: Option<i32>,
    pub timed_out: bool,
    pub wall_time_s: f64,
    /// Set when the process could not be spawned.
    pub launch_error: Option<String>,
}

/// Process backend. `workdir` already contains the input script and staged
/// potentials; the backend must write stdout/stderr to the standard file
/// names and leave the log at `LOG_FILE`.
pub trait Runner: Send + Sync {
    fn name(&self) -> &'static str;
    fn run(&self, workdir: &Path, timeout: Duration) -> Result<RawOutcome, ExecError>;
}

/// Where a run's workdir goes: `<root>/<session>/<iteration>/<candidate>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLocation {
    pub session: String,
    pub iteration: usize,
    pub candidate: String,
}

impl RunLocation {
    pub fn new(session: impl Into<String>, iteration: usize, candidate: impl Into<String>) -> Self {
        Self { session: session.into(), iteration, candidate: candidate.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntaxVerdict {
    pub executable: bool,
    pub first_error: Option<Diagnostic>,
}

/// Runs scripts through a [`Runner`] with fresh, exclusive workdirs and a
/// bound on concurrent executions.
pub struct Executor {
    runner: Arc<dyn Runner>,
    cfg: RunConfig,
    registry: Option<Arc<RegistryHandle>>,
    slots: Semaphore,
    scratch: AtomicU64,
}

impl fmt::Debug for Executor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Executor").field("runner", &self.runner.name()).field("cfg", &self.cfg).finish()
    }
}

impl Executor {
    pub fn new(runner: Arc<dyn Runner>, cfg: RunConfig) -> Result<Self, ExecError> {
        cfg.validate()?;
        let slots = Semaphore::new(cfg.parallelism);
        Ok(Self { runner, cfg, registry: None, slots, scratch: AtomicU64::new(0) })
    }

    /// Potentials referenced by a script are copied from this registry into
    /// each workdir before the run.
    pub fn with_registry(mut self, registry: Arc<RegistryHandle>) -> Self {
        self.registry = Some(registry);
        self
    }

    /// Runner for a profile: the subprocess backend for `real`, the
    /// synthesizing stub otherwise.
    pub fn for_profile(profile: RunnerProfile, cfg: RunConfig) -> Result<Self, ExecError> {
        let runner: Arc<dyn Runner> = match profile {
            RunnerProfile::Real => Arc::new(SubprocessRunner::new(cfg.clone())),
            RunnerProfile::Stub => Arc::new(StubRunner::default()),
        };
        Self::new(runner, cfg)
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn runner_name(&self) -> &'static str {
        self.runner.name()
    }

    /// Full run with `timeout_s`.
    pub fn execute(&self, script: &str, loc: &RunLocation) -> Result<ExecutionResult, ExecError> {
        self.run_with(script, loc, Duration::from_secs_f64(self.cfg.timeout_s))
    }

    /// Same as [`execute`](Self::execute) in a unique scratch location.
    pub fn execute_scratch(&self, script: &str) -> Result<ExecutionResult, ExecError> {
        let loc = self.scratch_location("run");
        self.execute(script, &loc)
    }

    /// Short launch with `probe_timeout_s`. A run that is still producing
    /// thermo output when the probe times out counts as executable.
    pub fn launch_probe(&self, script: &str, loc: &RunLocation) -> Result<SyntaxVerdict, ExecError> {
        let doc = parse_script(script);
        if doc.commands.is_empty() {
            return Ok(SyntaxVerdict {
                executable: false,
                first_error: Some(Diagnostic::error(DiagCode::EmptyScript, "script has no commands", None)),
            });
        }
        let result = self.run_with(script, loc, Duration::from_secs_f64(self.cfg.probe_timeout_s))?;
        Ok(probe_verdict(&result, &doc))
    }

    pub fn launch_probe_scratch(&self, script: &str) -> Result<SyntaxVerdict, ExecError> {
        let loc = self.scratch_location("probe");
        self.launch_probe(script, &loc)
    }

    fn scratch_location(&self, kind: &str) -> RunLocation {
        let n = self.scratch.fetch_add(1, Ordering::Relaxed);
        RunLocation::new(format!("scratch-{}", std::process::id()), 0, format!("{kind}-{n}"))
    }

    fn run_with(&self, script: &str, loc: &RunLocation, timeout: Duration) -> Result<ExecutionResult, ExecError> {
        if script.trim().is_empty() {
            return Err(ExecError::EmptyScript);
        }
        let workdir = self.fresh_workdir(loc)?;
        let input = workdir.join(INPUT_FILE);
        std::fs::write(&input, script).map_err(io_err(&input))?;
        let doc = parse_script(script);
        let staged = self.stage_potentials(&doc, &workdir)?;

        let outcome = {
            let _slot = self.slots.acquire();
            self.runner.run(&workdir, timeout)?
        };
        Ok(assemble_result(&workdir, &doc, &staged, outcome))
    }

    /// Creates a directory no other run uses. A repeated location gets a
    /// numeric suffix rather than sharing a directory.
    fn fresh_workdir(&self, loc: &RunLocation) -> Result<PathBuf, ExecError> {
        let parent = self
            .cfg
            .workdir_root
            .join(sanitize(&loc.session))
            .join(loc.iteration.to_string());
        std::fs::create_dir_all(&parent).map_err(io_err(&parent))?;
        let base = sanitize(&loc.candidate);
        for n in 0u32.. {
            let name = if n == 0 { base.clone() } else { format!("{base}-{n}") };
            let dir = parent.join(name);
            match std::fs::create_dir(&dir) {
                Ok(()) => return Ok(dir),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(ExecError::Io { path: dir, source: e }),
            }
        }
        unreachable!("u32 suffix space exhausted")
    }

    fn stage_potentials(&self, doc: &ScriptDocument, workdir: &Path) -> Result<Vec<String>, ExecError> {
        let Some(registry) = &self.registry else {
            return Ok(Vec::new());
        };
        let snapshot = registry.snapshot();
        let mut staged = Vec::new();
        for r in &doc.potential_refs {
            let Some(record) = snapshot.get(&r.file_name) else { continue };
            let dest = workdir.join(&record.file_name);
            if !dest.exists() {
                std::fs::copy(&record.path, &dest).map_err(io_err(&dest))?;
            }
            staged.push(record.file_name.clone());
        }
        Ok(staged)
    }
}

fn sanitize(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    match cleaned.as_str() {
        "" | "." | ".." => "_".into(),
        _ => cleaned,
    }
}

fn assemble_result(workdir: &Path, doc: &ScriptDocument, staged: &[String], outcome: RawOutcome) -> ExecutionResult {
    let stdout_path = workdir.join(STDOUT_FILE);
    let stderr_path = workdir.join(STDERR_FILE);
    let read = |p: &Path| std::fs::read_to_string(p).unwrap_or_default();
    let stdout = read(&stdout_path);
    let stderr = read(&stderr_path);
    let log_path = workdir.join(LOG_FILE);
    let log = read(&log_path);
    // a log echoed only to the terminal still counts for classification
    let log_for_class = if log.is_empty() { stdout.as_str() } else { log.as_str() };

    let (status, error_class, error_excerpt) = if let Some(err) = outcome.launch_error {
        (ExecStatus::LaunchFailure, ErrorClass::Other, crate::util::truncate_chars(&err, EXCERPT_LIMIT))
    } else {
        let class = classify(outcome.exit_code, &stderr, log_for_class);
        let excerpt = error_excerpt(&stderr, log_for_class);
        if outcome.timed_out {
            let note = format!("process exceeded the {:.1} s time limit", outcome.wall_time_s);
            let excerpt = if excerpt.is_empty() { note } else { format!("{note}\n{excerpt}") };
            (ExecStatus::Timeout, class, crate::util::truncate_chars(&excerpt, EXCERPT_LIMIT))
        } else if outcome.exit_code == Some(0) && class == ErrorClass::None {
            (ExecStatus::Success, class, String::new())
        } else {
            let excerpt = if excerpt.is_empty() {
                format!("process exited with code {:?}", outcome.exit_code)
            } else {
                excerpt
            };
            let class = if class == ErrorClass::None { ErrorClass::Other } else { class };
            (ExecStatus::RuntimeError, class, excerpt)
        }
    };

    ExecutionResult {
        status,
        exit_code: outcome.exit_code,
        wall_time_s: outcome.wall_time_s,
        workdir: workdir.to_path_buf(),
        stdout_path,
        stderr_path,
        error_class,
        error_excerpt,
        artifacts: collect_artifacts(workdir, doc, staged),
    }
}

const DUMP_EXTS: &[&str] = &["dump", "lammpstrj", "atom", "xyz"];
const DATA_EXTS: &[&str] = &["data", "cif", "restart"];

fn collect_artifacts(workdir: &Path, doc: &ScriptDocument, staged: &[String]) -> ArtifactSet {
    let mut dump_names = BTreeSet::new();
    let mut data_names = BTreeSet::new();
    for cmd in &doc.commands {
        match cmd.name.as_str() {
            "dump" => {
                if let Some(f) = cmd.arg(4) {
                    dump_names.insert(f.to_string());
                }
            }
            "write_data" | "write_restart" => {
                if let Some(f) = cmd.arg(0) {
                    data_names.insert(f.to_string());
                }
            }
            _ => {}
        }
    }
    let skip: BTreeSet<&str> = [INPUT_FILE, STDOUT_FILE, STDERR_FILE].into_iter().chain(staged.iter().map(String::as_str)).collect();

    let mut set = ArtifactSet::default();
    let Ok(entries) = std::fs::read_dir(workdir) else { return set };
    let mut names: Vec<String> = entries
        .flatten()
        .filter(|e| e.file_type().is_ok_and(|t| t.is_file()))
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    for name in names {
        if skip.contains(name.as_str()) {
            continue;
        }
        let path = workdir.join(&name);
        let ext = Path::new(&name).extension().and_then(|e| e.to_str()).unwrap_or("");
        if name == LOG_FILE {
            set.log_file = Some(path);
        } else if dump_names.contains(&name) || DUMP_EXTS.contains(&ext) {
            set.dump_files.push(path);
        } else if data_names.contains(&name) || DATA_EXTS.contains(&ext) {
            set.data_files.push(path);
        } else {
            set.other.push(path);
        }
    }
    set
}

/// Classifies a probe run. Exit 0 or a timeout while thermo rows were being
/// produced both count as executable.
pub fn probe_verdict(result: &ExecutionResult, doc: &ScriptDocument) -> SyntaxVerdict {
    let has_thermo = result.thermo().is_some_and(|t| !t.is_empty());
    let executable = match result.status {
        ExecStatus::Success => true,
        ExecStatus::Timeout => has_thermo && result.error_class == ErrorClass::None,
        ExecStatus::RuntimeError | ExecStatus::LaunchFailure => false,
    };
    if executable {
        return SyntaxVerdict { executable, first_error: None };
    }
    let code = match result.status {
        ExecStatus::LaunchFailure => DiagCode::LaunchFailure,
        ExecStatus::Timeout if result.error_class == ErrorClass::None => DiagCode::ProbeTimeout,
        _ => result.error_class.diag_code().unwrap_or(DiagCode::RuntimeError),
    };
    let message = first_error_line(&result.error_excerpt);
    let line = locate_error_line(doc, &message);
    SyntaxVerdict { executable: false, first_error: Some(Diagnostic::error(code, message, line)) }
}

fn first_error_line(excerpt: &str) -> String {
    excerpt
        .lines()
        .find(|l| l.contains("ERROR"))
        .or_else(|| excerpt.lines().find(|l| !l.trim().is_empty()))
        .unwrap_or("")
        .trim()
        .to_string()
}

/// Best-effort script line for an error message: the command whose text the
/// message quotes, or the command naming a file the message mentions.
fn locate_error_line(doc: &ScriptDocument, message: &str) -> Option<usize> {
    if message.is_empty() {
        return None;
    }
    let quoted = doc.commands.iter().find(|c| {
        let text = std::iter::once(c.name.as_str()).chain(c.args.iter().map(String::as_str)).collect::<Vec<_>>().join(" ");
        message.contains(&text)
    });
    if let Some(c) = quoted {
        return Some(c.line);
    }
    doc.potential_refs
        .iter()
        .find(|r| message.split_whitespace().any(|w| w.trim_matches(|ch: char| ch == '\'' || ch == '"') == r.file_name))
        .map(|r| r.line)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: ExecStatus,
    pub runtime_s: f64,
    pub error: Option<String>,
    pub rule_flags: BTreeSet<AnomalyFlag>,
    pub key_observables: BTreeMap<String, f64>,
}

/// Compact view of a run: robustness flags from the log checks and the
/// first/last values of Temp, TotEng and Press.
pub fn summarize(result: &ExecutionResult, thermo: Option<&ThermoSeries>) -> RunSummary {
    let report = evaluate_rules(thermo, &SimType::unknown(), Some(result), &ToleranceConfig::default());
    let mut key_observables = BTreeMap::new();
    if let Some(series) = thermo.filter(|s| !s.is_empty()) {
        for (column, key) in [("Temp", "temp"), ("TotEng", "toteng"), ("Press", "press")] {
            if let Some(values) = series.column(column) {
                if let (Some(first), Some(last)) = (values.first(), values.last()) {
                    key_observables.insert(format!("{key}_first"), *first);
                    key_observables.insert(format!("{key}_last"), *last);
                }
            }
        }
    }
    RunSummary {
        status: result.status,
        runtime_s: result.wall_time_s,
        error: (!result.error_excerpt.is_empty()).then(|| first_error_line(&result.error_excerpt)),
        rule_flags: report.anomaly_flags,
        key_observables,
    }
}

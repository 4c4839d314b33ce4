//! The closed generate / run / evaluate loop.

mod events;
mod feedback;
mod hitl;
mod pool;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub use events::{stages_well_formed, EventLog, SessionEvent, Stage};
pub use feedback::{evaluator_feedback, generator_problems, with_directives};
pub use hitl::{
    apply_parameters, ChannelCheckpoint, Checkpoint, CheckpointError, HitlMode, NotPaused, PauseInfo, PausePoint,
    QueueCheckpoint, ResumeMessage,
};
pub use pool::{PoolError, PoolRecord, TrajectoryPool};

use crate::exec::{
    classify, error_excerpt, probe_verdict, summarize, ArtifactSet, ErrorClass, ExecError, ExecStatus, ExecutionResult,
    Executor, RunLocation, SyntaxVerdict,
};
use crate::llm::{extract_script, CodeWriter, DimensionJudge, LlmClient, LlmError, QueryRewriter};
use crate::potentials::{
    check_script_potentials, existence_probe, fetch_remote, DisabledFetcher, Existence, FetchOutcome,
    PotentialCheckReport, PotentialFetcher, RegistryHandle, SimilarityWeights, DEFAULT_TOP_K,
};
use crate::reward::{
    assemble_indicators, format_reward, FormatVerdict, Indicators, JudgedDimensions, RewardBreakdown, RewardConfig, RewardError,
};
use crate::script::{parse_script, static_lint, CommandCatalog, DiagCode, Diagnostic};
use crate::thermo::{evaluate_rules, identify_sim_type, RuleQualityReport, ToleranceConfig};
use crate::util::sha256_hex;

/// Name of the trajectory file written into the session directory.
pub const TRAJECTORY_FILE: &str = "trajectory.json";
/// Name of the event log written into the session directory.
pub const EVENTS_FILE: &str = "events.jsonl";

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("INVALID_CONFIG: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Pool(#[from] PoolError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub max_outer_iters: usize,
    pub max_generator_inner_iters: usize,
    /// On the reward's score scale.
    pub accept_threshold: f64,
    /// On the `r_total` scale; `None` means `λ_format + λ_correct / 2`.
    pub recycle_threshold: Option<f64>,
    pub k_candidates: usize,
    pub hitl_mode: HitlMode,
    pub session_timeout_s: Option<f64>,
    /// Passed to the writer as the sampling seed.
    pub seed: Option<u64>,
    /// Acceptance also needs the run to have finished successfully.
    pub require_exec_success: bool,
    /// Ask the LLM whether a missing potential file exists at all.
    pub existence_probe: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            max_outer_iters: 5,
            max_generator_inner_iters: 3,
            accept_threshold: 6.0,
            recycle_threshold: None,
            k_candidates: 3,
            hitl_mode: HitlMode::Off,
            session_timeout_s: None,
            seed: None,
            require_exec_success: true,
            existence_probe: false,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self, reward: &RewardConfig) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::InvalidConfig(m.to_string()));
        if self.max_outer_iters == 0 {
            return bad("max_outer_iters must be at least 1");
        }
        if self.max_generator_inner_iters == 0 {
            return bad("max_generator_inner_iters must be at least 1");
        }
        if self.k_candidates == 0 {
            return bad("k_candidates must be at least 1");
        }
        if !(0.0..=reward.score_scale).contains(&self.accept_threshold) {
            return bad("accept_threshold is outside the score scale");
        }
        let recycle = self.recycle_threshold_for(reward);
        if !(0.0..=reward.max_total()).contains(&recycle) {
            return bad("recycle_threshold is outside the r_total range");
        }
        if self.session_timeout_s.is_some_and(|t| t.is_nan() || t <= 0.0) {
            return bad("session_timeout_s must be positive");
        }
        reward.validate().map_err(|e| AgentError::InvalidConfig(e.to_string()))?;
        if reward.bonus_weights.len() != 8 || reward.penalty_weights.len() != 8 {
            return bad("the session scores eight rubric dimensions; weights must have length 8");
        }
        Ok(())
    }

    pub fn recycle_threshold_for(&self, reward: &RewardConfig) -> f64 {
        self.recycle_threshold.unwrap_or(reward.lambda_format + reward.lambda_correct * 0.5)
    }

    /// Upper bound on LLM calls made by one session.
    pub fn max_llm_calls(&self) -> usize {
        self.max_outer_iters * (self.max_generator_inner_iters + 2)
    }
}

/// Everything a session talks to.
#[derive(Clone)]
pub struct SessionDeps {
    pub llm: LlmClient,
    /// `None` runs without the judge: judged dimensions count as met.
    pub judge_llm: Option<LlmClient>,
    pub executor: Arc<Executor>,
    pub registry: Arc<RegistryHandle>,
    pub fetcher: Arc<dyn PotentialFetcher>,
    pub catalog: Arc<CommandCatalog>,
    pub reward: RewardConfig,
    pub tolerance: ToleranceConfig,
    pub similarity: SimilarityWeights,
    pub top_k: usize,
    pub pool: Option<Arc<TrajectoryPool>>,
    pub writer: CodeWriter,
    pub judge: DimensionJudge,
    pub rewriter: QueryRewriter,
}

impl SessionDeps {
    pub fn new(llm: LlmClient, executor: Arc<Executor>, registry: Arc<RegistryHandle>) -> Self {
        Self {
            llm,
            judge_llm: None,
            executor,
            registry,
            fetcher: Arc::new(DisabledFetcher),
            catalog: Arc::new(CommandCatalog::bundled()),
            reward: RewardConfig::default(),
            tolerance: ToleranceConfig::default(),
            similarity: SimilarityWeights::default(),
            top_k: DEFAULT_TOP_K,
            pool: None,
            writer: CodeWriter::default(),
            judge: DimensionJudge::default(),
            rewriter: QueryRewriter::default(),
        }
    }

    pub fn with_judge(mut self, client: LlmClient) -> Self {
        self.judge_llm = Some(client);
        self
    }

    pub fn with_pool(mut self, pool: Arc<TrajectoryPool>) -> Self {
        self.pool = Some(pool);
        self
    }

    /// Directory holding one session's runs and records.
    pub fn session_dir(&self, session_id: &str) -> PathBuf {
        self.executor.config().workdir_root.join(session_id)
    }
}

/// Per-session handles shared with observers.
#[derive(Clone)]
pub struct SessionContext {
    pub id: String,
    pub events: Arc<EventLog>,
    pub checkpoint: Option<Arc<dyn Checkpoint>>,
}

impl SessionContext {
    /// In-memory event log only.
    pub fn new(id: impl Into<String>) -> Self {
        Self { id: id.into(), events: Arc::new(EventLog::new()), checkpoint: None }
    }

    /// Event log mirrored to `<session dir>/events.jsonl`.
    pub fn persistent(id: impl Into<String>, deps: &SessionDeps) -> std::io::Result<Self> {
        let id = id.into();
        let events = EventLog::with_file(&deps.session_dir(&id).join(EVENTS_FILE))?;
        Ok(Self { id, events: Arc::new(events), checkpoint: None })
    }

    pub fn with_checkpoint(mut self, checkpoint: Arc<dyn Checkpoint>) -> Self {
        self.checkpoint = Some(checkpoint);
        self
    }
}

pub fn valid_session_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Accepted,
    IterationCap,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionFailure {
    /// DEP_FAILURE, SESSION_TIMEOUT or USER_ABORT.
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub rules: RuleQualityReport,
    pub judged: Option<JudgedDimensions>,
    pub judge_error: Option<String>,
    pub indicators: Indicators,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Writer drafts made in this iteration.
    pub inner_attempts: usize,
    pub converged: bool,
    pub script_text: String,
    pub script_sha: String,
    pub format: FormatVerdict,
    pub lint: Vec<Diagnostic>,
    pub probe: SyntaxVerdict,
    pub potential_report: PotentialCheckReport,
    /// Paths are relative to the session directory.
    pub exec: Option<ExecutionResult>,
    pub quality: Option<QualityReport>,
    pub reward: Option<RewardBreakdown>,
    pub accepted: bool,
    /// Evaluation feedback handed to the next draft (and to the pool).
    pub feedback: String,
    pub user_directives: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub session_id: String,
    pub task_q: String,
    pub iterations: Vec<IterationRecord>,
    pub terminal: Terminal,
    pub rewritten_q: Option<String>,
    pub error: Option<SessionFailure>,
    pub pool_error: Option<String>,
}

impl Trajectory {
    pub fn final_reward(&self) -> Option<&RewardBreakdown> {
        self.iterations.last().and_then(|it| it.reward.as_ref())
    }

    pub fn final_iteration(&self) -> Option<&IterationRecord> {
        self.iterations.last()
    }

    /// The pool record this trajectory yields, if it was recycled.
    pub fn pool_record(&self) -> Option<PoolRecord> {
        let rewritten = self.rewritten_q.clone()?;
        let last = self.iterations.last()?;
        Some(PoolRecord {
            instruction: rewritten,
            original_query: self.task_q.clone(),
            code: last.script_text.clone(),
            feedback: last.feedback.clone(),
            reward: last.reward.as_ref()?.r_total,
        })
    }
}

/// Appends the recycled record of `traj` to `pool`; returns the record count.
pub fn append_to_pool(traj: &Trajectory, pool: &TrajectoryPool) -> Result<usize, PoolError> {
    let record = traj.pool_record().ok_or(PoolError::NotRecyclable)?;
    pool.append(&record)
}

enum Stop {
    Abort(SessionFailure),
}

fn dep_failure(what: &str, e: impl std::fmt::Display) -> Stop {
    Stop::Abort(SessionFailure { code: "DEP_FAILURE".into(), message: format!("{what}: {e}") })
}

fn timeout_failure() -> Stop {
    Stop::Abort(SessionFailure { code: "SESSION_TIMEOUT".into(), message: "session wall-clock limit reached".into() })
}

/// State of one generate step.
struct Draft {
    script: String,
    format: FormatVerdict,
    lint: Vec<Diagnostic>,
    probe: SyntaxVerdict,
    potentials: PotentialCheckReport,
    problems: String,
}

impl Draft {
    fn converged(&self) -> bool {
        !self.lint.iter().any(Diagnostic::is_error) && self.probe.executable && self.potentials.is_complete()
    }
}

struct Session<'a> {
    task: &'a str,
    cfg: &'a SessionConfig,
    deps: &'a SessionDeps,
    ctx: &'a SessionContext,
    llm: LlmClient,
    judge_llm: Option<LlmClient>,
    deadline: Option<Instant>,
    session_dir: PathBuf,
    directives: Vec<String>,
    iterations: Vec<IterationRecord>,
}

/// Runs one task through the loop until it is accepted, the iteration cap
/// is hit, or it aborts. Dependency failures end the session as `aborted`
/// rather than returning an error; only bad configuration is an error.
pub fn run_session(
    task_q: &str,
    cfg: &SessionConfig,
    deps: &SessionDeps,
    ctx: &SessionContext,
) -> Result<Trajectory, AgentError> {
    cfg.validate(&deps.reward)?;
    if !valid_session_id(&ctx.id) {
        return Err(AgentError::InvalidConfig(format!("invalid session id {:?}", ctx.id)));
    }
    if cfg.hitl_mode != HitlMode::Off && ctx.checkpoint.is_none() {
        return Err(AgentError::InvalidConfig("hitl_mode needs a checkpoint".into()));
    }
    let mut s = Session {
        task: task_q,
        cfg,
        deps,
        ctx,
        llm: deps.llm.with_fresh_counter(),
        judge_llm: deps.judge_llm.as_ref().map(LlmClient::with_fresh_counter),
        deadline: cfg.session_timeout_s.map(|t| Instant::now() + Duration::from_secs_f64(t)),
        session_dir: deps.session_dir(&ctx.id),
        directives: Vec::new(),
        iterations: Vec::new(),
    };
    let outcome = s.run_loop();
    Ok(s.finish(outcome))
}

impl Session<'_> {
    fn calls_used(&self) -> usize {
        self.llm.call_count() + self.judge_llm.as_ref().map_or(0, LlmClient::call_count)
    }

    fn calls_left(&self) -> usize {
        self.cfg.max_llm_calls().saturating_sub(self.calls_used())
    }

    fn check_deadline(&self) -> Result<(), Stop> {
        match self.deadline {
            Some(d) if Instant::now() >= d => Err(timeout_failure()),
            _ => Ok(()),
        }
    }

    fn emit(&self, stage: Stage, payload: Value) {
        self.ctx.events.emit(stage, payload);
    }

    fn writer_task(&self) -> String {
        self.task.to_string()
    }

    fn run_loop(&mut self) -> Result<Terminal, Stop> {
        let mut previous: Option<(String, String)> = None;
        for outer in 1..=self.cfg.max_outer_iters {
            let (draft, attempts) = self.generate(outer, previous.take())?;
            let mut record = IterationRecord {
                iteration: outer,
                inner_attempts: attempts,
                converged: draft.converged(),
                script_sha: sha256_hex(&draft.script),
                script_text: draft.script.clone(),
                format: draft.format.clone(),
                lint: draft.lint.clone(),
                probe: draft.probe.clone(),
                potential_report: draft.potentials.clone(),
                exec: None,
                quality: None,
                reward: None,
                accepted: false,
                feedback: String::new(),
                user_directives: Vec::new(),
            };
            self.iterations.push(record.clone());

            if self.cfg.hitl_mode.pauses_at(PausePoint::BeforeRun) {
                let msg = self.pause(PausePoint::BeforeRun, outer, &record.script_text)?;
                self.apply_before_run(&msg, &mut record)?;
                *self.iterations.last_mut().expect("pushed") = record.clone();
            }

            self.check_deadline()?;
            let exec = self.run(outer, &record)?;
            record.exec = exec.as_ref().map(|e| relativize(e, &self.session_dir));
            *self.iterations.last_mut().expect("pushed") = record.clone();

            self.check_deadline()?;
            self.evaluate(outer, &mut record, exec.as_ref())?;
            let accepted = record.accepted;
            let mut next_script = record.script_text.clone();
            *self.iterations.last_mut().expect("pushed") = record.clone();

            if self.cfg.hitl_mode.pauses_at(PausePoint::AfterEvaluation) {
                let msg = self.pause(PausePoint::AfterEvaluation, outer, &record.script_text)?;
                let applied = self.absorb_edits(&msg, &mut next_script, &mut record);
                self.iterations.last_mut().expect("pushed").user_directives = applied;
            }
            if accepted {
                return Ok(Terminal::Accepted);
            }
            previous = Some((next_script, record.feedback.clone()));
        }
        Ok(Terminal::IterationCap)
    }

    /// Inner loop: draft, check, and redraft with the problems found until
    /// the draft converges or the inner cap is reached.
    fn generate(&mut self, outer: usize, previous: Option<(String, String)>) -> Result<(Draft, usize), Stop> {
        let mut prev = previous.map(|(script, problems)| (script, with_directives(&problems, &self.directives)));
        let mut last: Option<Draft> = None;
        let mut attempts = 0;
        let mut writer = self.deps.writer.clone();
        writer.params.seed = self.cfg.seed.or(writer.params.seed);
        for inner in 1..=self.cfg.max_generator_inner_iters {
            self.check_deadline()?;
            if self.calls_left() == 0 && last.is_some() {
                break;
            }
            let task = self.writer_task();
            let drafts = writer
                .draft(&self.llm, &task, prev.as_ref().map(|(s, p)| (s.as_str(), p.as_str())), 1)
                .map_err(|e| dep_failure("writer", e))?;
            attempts += 1;
            let first = drafts.into_iter().next().expect("client returns exactly n");
            let draft = self.check_draft(outer, &format!("probe-{inner}"), first.script, first.format, inner)?;
            let converged = draft.converged();
            self.emit(
                Stage::Generator,
                json!({
                    "iteration": outer,
                    "inner": inner,
                    "script": draft.script,
                    "script_sha": sha256_hex(&draft.script),
                    "format": draft.format,
                    "lint": draft.lint,
                    "probe": draft.probe,
                    "potentials": potentials_summary(&draft.potentials),
                    "problems": draft.problems,
                    "converged": converged,
                }),
            );
            if converged {
                return Ok((draft, attempts));
            }
            prev = Some((draft.script.clone(), with_directives(&draft.problems, &self.directives)));
            last = Some(draft);
        }
        Ok((last.expect("at least one draft"), attempts))
    }

    /// Lint, potential check (with remote fetch), and launch probe.
    fn check_draft(
        &self,
        outer: usize,
        probe_slot: &str,
        script: String,
        format: FormatVerdict,
        inner: usize,
    ) -> Result<Draft, Stop> {
        let doc = parse_script(&script);
        let lint = static_lint(&doc, &self.deps.catalog);
        let mut potentials = self.check_potentials(&doc);
        if !potentials.missing.is_empty() && self.deps.fetcher.enabled() {
            let mut fetched = false;
            for r in &potentials.missing {
                if let Ok(FetchOutcome::Fetched(_)) = fetch_remote(&r.file_name, &*self.deps.fetcher, &self.deps.registry) {
                    fetched = true;
                }
            }
            if fetched {
                potentials = self.check_potentials(&doc);
            }
        }
        let probe = if script.trim().is_empty() {
            SyntaxVerdict {
                executable: false,
                first_error: Some(Diagnostic::error(DiagCode::EmptyScript, "no script found in the response", None)),
            }
        } else {
            let loc = RunLocation::new(&self.ctx.id, outer, probe_slot);
            self.deps.executor.launch_probe(&script, &loc).map_err(|e| dep_failure("runner", e))?
        };
        let mut problems = generator_problems(&lint, &probe, &potentials);
        if self.cfg.existence_probe {
            // keep two calls for the judge and one per remaining draft
            let reserve = self.cfg.max_generator_inner_iters.saturating_sub(inner) + 2;
            for r in &potentials.missing {
                if self.calls_left() <= reserve {
                    break;
                }
                if existence_probe(&r.file_name, &self.llm) == Existence::NotExists {
                    problems.push_str(&format!("- [MISSING_FILE] {} does not appear to exist anywhere\n", r.file_name));
                }
            }
        }
        Ok(Draft { script, format, lint, probe, potentials, problems })
    }

    fn check_potentials(&self, doc: &crate::script::ScriptDocument) -> PotentialCheckReport {
        check_script_potentials(doc, &self.deps.registry.snapshot(), self.deps.top_k, &self.deps.similarity)
    }

    fn pause(&self, point: PausePoint, iteration: usize, script: &str) -> Result<ResumeMessage, Stop> {
        let checkpoint = self.ctx.checkpoint.as_ref().expect("validated");
        self.emit(Stage::Hitl, json!({ "iteration": iteration, "point": point, "state": "paused" }));
        let info = PauseInfo { point, iteration, script: script.to_string() };
        let msg = match checkpoint.wait(&info, self.deadline) {
            Ok(msg) => msg,
            Err(CheckpointError::Timeout) => return Err(timeout_failure()),
            Err(CheckpointError::Closed) => {
                return Err(Stop::Abort(SessionFailure {
                    code: "USER_ABORT".into(),
                    message: "checkpoint closed while paused".into(),
                }))
            }
        };
        self.emit(
            Stage::Hitl,
            json!({
                "iteration": iteration,
                "point": point,
                "state": "resumed",
                "action": {
                    "script_sha": msg.script.as_deref().map(sha256_hex),
                    "parameters": msg.parameters,
                    "directive": msg.directive,
                    "abort": msg.abort,
                },
            }),
        );
        if msg.abort {
            return Err(Stop::Abort(SessionFailure { code: "USER_ABORT".into(), message: "aborted by the user".into() }));
        }
        Ok(msg)
    }

    /// Records directives and applies script/parameter edits to `script`.
    /// Returns the directive log for the iteration.
    fn absorb_edits(&mut self, msg: &ResumeMessage, script: &mut String, record: &mut IterationRecord) -> Vec<String> {
        let mut log = record.user_directives.clone();
        if let Some(d) = msg.directive.as_ref().filter(|d| !d.trim().is_empty()) {
            self.directives.push(d.clone());
            log.push(format!("directive: {d}"));
        }
        if let Some(edited) = &msg.script {
            *script = edited.clone();
            log.push(format!("script replaced (sha256 {})", sha256_hex(edited)));
        }
        if !msg.parameters.is_empty() {
            let (patched, unmatched) = apply_parameters(script, &msg.parameters);
            *script = patched;
            for (k, v) in &msg.parameters {
                if unmatched.contains(k) {
                    log.push(format!("parameter {k} not found; ignored"));
                } else {
                    log.push(format!("parameter {k} = {v}"));
                }
            }
        }
        record.user_directives = log.clone();
        log
    }

    fn apply_before_run(&mut self, msg: &ResumeMessage, record: &mut IterationRecord) -> Result<(), Stop> {
        let mut script = record.script_text.clone();
        self.absorb_edits(msg, &mut script, record);
        if script != record.script_text {
            // the edited text is re-checked so the safety gate still holds
            let draft = self.check_draft(record.iteration, "probe-edit", script, record.format.clone(), usize::MAX)?;
            record.script_sha = sha256_hex(&draft.script);
            record.script_text = draft.script;
            record.lint = draft.lint;
            record.probe = draft.probe;
            record.potential_report = draft.potentials;
            record.converged = record.probe.executable
                && record.potential_report.is_complete()
                && !record.lint.iter().any(Diagnostic::is_error);
        }
        Ok(())
    }

    fn run(&self, outer: usize, record: &IterationRecord) -> Result<Option<ExecutionResult>, Stop> {
        if !record.probe.executable {
            let reason = record.probe.first_error.as_ref().map(ToString::to_string).unwrap_or_default();
            self.emit(
                Stage::Runner,
                json!({
                    "iteration": outer,
                    "executed": false,
                    "script_sha": record.script_sha,
                    "reason": reason,
                }),
            );
            return Ok(None);
        }
        let loc = RunLocation::new(&self.ctx.id, outer, "run");
        let exec = self.deps.executor.execute(&record.script_text, &loc).map_err(|e| dep_failure("runner", e))?;
        let thermo = exec.thermo();
        let summary = summarize(&exec, thermo.as_ref());
        let rel = relativize(&exec, &self.session_dir);
        self.emit(
            Stage::Runner,
            json!({
                "iteration": outer,
                "executed": true,
                "script_sha": record.script_sha,
                "status": exec.status,
                "error_class": exec.error_class,
                "error_excerpt": exec.error_excerpt,
                "workdir": rel.workdir,
                "artifacts": rel.artifacts.all().collect::<Vec<_>>(),
                "flags": summary.rule_flags,
                "observables": summary.key_observables,
            }),
        );
        Ok(Some(exec))
    }

    fn evaluate(&mut self, outer: usize, record: &mut IterationRecord, exec: Option<&ExecutionResult>) -> Result<(), Stop> {
        let (rules, summary) = rules_and_summary(&record.script_text, &record.probe, exec, &self.deps.tolerance);
        let (judged, judge_error) = match &self.judge_llm {
            Some(_) if self.calls_left() < 2 => (None, Some("LLM call budget exhausted".to_string())),
            Some(client) => match self.deps.judge.judge(client, self.task, &record.script_text, &summary) {
                Ok(j) => (Some(j), None),
                Err(e) => (None, Some(e.to_string())),
            },
            None => (None, None),
        };
        let indicators = assemble_indicators(&rules, &record.lint, &record.probe, judged.as_ref());
        let reward = RewardBreakdown::compute(record.format.value, &indicators, &self.deps.reward)
            .map_err(|e| dep_failure("reward", e))?;
        let exec_ok = exec.is_some_and(|e| e.status == ExecStatus::Success);
        let accepted = reward.score >= self.cfg.accept_threshold && (exec_ok || !self.cfg.require_exec_success);
        let feedback = evaluator_feedback(&reward, &indicators, &rules, exec, self.cfg.accept_threshold);
        self.emit(
            Stage::Evaluator,
            json!({
                "iteration": outer,
                "flags": rules.anomaly_flags,
                "metrics": rules.metrics,
                "result_valid": rules.result_valid,
                "physically_sound": rules.physically_sound,
                "judged": judged.as_ref().map(|j| j.dims.iter().map(|(d, v)| (d.key(), v.satisfied)).collect::<std::collections::BTreeMap<_, _>>()),
                "judge_error": judge_error,
                "indicators": { "bonuses": indicators.bonuses, "penalties": indicators.penalties },
                "reward": {
                    "r_format": reward.r_format,
                    "r_raw": reward.r_raw,
                    "r_correct": reward.r_correct,
                    "r_total": reward.r_total,
                    "score": reward.score,
                },
                "accept_threshold": self.cfg.accept_threshold,
                "accepted": accepted,
                "feedback": feedback,
            }),
        );
        record.quality = Some(QualityReport { rules, judged, judge_error, indicators });
        record.reward = Some(reward);
        record.accepted = accepted;
        record.feedback = feedback;
        Ok(())
    }

    fn finish(&mut self, outcome: Result<Terminal, Stop>) -> Trajectory {
        let (terminal, error) = match outcome {
            Ok(t) => (t, None),
            Err(Stop::Abort(f)) => (Terminal::Aborted, Some(f)),
        };
        let mut traj = Trajectory {
            session_id: self.ctx.id.clone(),
            task_q: self.task.to_string(),
            iterations: std::mem::take(&mut self.iterations),
            terminal,
            rewritten_q: None,
            error,
            pool_error: None,
        };
        let recycle = self.cfg.recycle_threshold_for(&self.deps.reward);
        let low = traj.final_reward().map(|r| r.r_total < recycle);
        if terminal != Terminal::Aborted && low == Some(true) {
            let last = traj.iterations.last().expect("has reward");
            traj.rewritten_q = Some(self.rewrite(&last.script_text, &last.feedback));
            if let Some(pool) = &self.deps.pool {
                if let Err(e) = append_to_pool(&traj, pool) {
                    traj.pool_error = Some(e.to_string());
                }
            }
        }
        if let Err(e) = write_trajectory(&traj, &self.session_dir) {
            tracing::warn!(session = %traj.session_id, error = %e, "could not write trajectory file");
        }
        self.emit(
            Stage::Terminal,
            json!({
                "outcome": traj.terminal,
                "iterations": traj.iterations.len(),
                "final_score": traj.final_reward().map(|r| r.score),
                "final_r_total": traj.final_reward().map(|r| r.r_total),
                "rewritten_q": traj.rewritten_q,
                "pooled": traj.rewritten_q.is_some() && self.deps.pool.is_some() && traj.pool_error.is_none(),
                "error": traj.error,
            }),
        );
        traj
    }

    /// LLM rewrite when the call budget allows, otherwise a plain
    /// concatenation of the task and the feedback.
    fn rewrite(&self, code: &str, feedback: &str) -> String {
        let fallback = || {
            if feedback.trim().is_empty() {
                self.task.to_string()
            } else {
                format!("{}\n\nAvoid these problems from an earlier attempt:\n{}", self.task, feedback.trim_end())
            }
        };
        if self.calls_left() == 0 {
            return fallback();
        }
        match self.deps.rewriter.rewrite(&self.llm, self.task, code, feedback) {
            Ok(q) => q,
            Err(e) => {
                tracing::warn!(error = %e, "query rewrite failed; using fallback");
                fallback()
            }
        }
    }
}

/// Rule checks for a script and its run, plus the run summary text shown
/// to the judge.
fn rules_and_summary(
    script: &str,
    probe: &SyntaxVerdict,
    exec: Option<&ExecutionResult>,
    tol: &ToleranceConfig,
) -> (RuleQualityReport, String) {
    let doc = parse_script(script);
    let thermo = exec.and_then(ExecutionResult::thermo);
    let rules = evaluate_rules(thermo.as_ref(), &identify_sim_type(&doc), exec, tol);
    let summary = match exec {
        Some(e) => serde_json::to_string_pretty(&summarize(e, thermo.as_ref())).expect("summary serializes"),
        None => format!(
            "The script was not executed: {}",
            probe.first_error.as_ref().map(ToString::to_string).unwrap_or_default()
        ),
    };
    (rules, summary)
}

/// Scores a single-shot candidate the way the evaluator would, using the
/// run itself in place of a launch probe. Judge failures degrade to
/// unjudged dimensions.
pub fn score_candidate(task_q: &str, cand: &CandidateOutcome, deps: &SessionDeps) -> Result<RewardBreakdown, RewardError> {
    assess(task_q, &cand.script, cand.format.value, cand.exec.as_ref(), deps).map(|(_, reward)| reward)
}

/// Evaluation of a script and an existing log, nothing executed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineEvaluation {
    pub format: FormatVerdict,
    pub lint: Vec<Diagnostic>,
    pub quality: QualityReport,
    pub reward: RewardBreakdown,
}

/// Scores `text` against the log of a run that already happened. `text` is
/// either a bare script, which counts as format-compliant, or a full model
/// response, which is checked against the answer protocol.
pub fn evaluate_offline(task_q: &str, text: &str, log_path: &Path, deps: &SessionDeps) -> Result<OfflineEvaluation, RewardError> {
    let (script, format) = if text.contains("<answer>") {
        let format = format_reward(text, &deps.reward.required_answer_fields);
        (extract_script(text).unwrap_or_default(), format)
    } else {
        (text.to_string(), FormatVerdict { value: 1, failure: None, answer: None })
    };
    let log = std::fs::read_to_string(log_path).unwrap_or_default();
    let error_class = classify(None, "", &log);
    let dir = log_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let exec = ExecutionResult {
        status: if error_class == ErrorClass::None { ExecStatus::Success } else { ExecStatus::RuntimeError },
        exit_code: None,
        wall_time_s: 0.0,
        workdir: dir,
        stdout_path: log_path.to_path_buf(),
        stderr_path: log_path.to_path_buf(),
        error_class,
        error_excerpt: error_excerpt("", &log),
        artifacts: ArtifactSet { log_file: Some(log_path.to_path_buf()), ..ArtifactSet::default() },
    };
    let (quality, reward) = assess(task_q, &script, format.value, Some(&exec), deps)?;
    let lint = static_lint(&parse_script(&script), &deps.catalog);
    Ok(OfflineEvaluation { format, lint, quality, reward })
}

fn assess(
    task_q: &str,
    script: &str,
    r_format: u8,
    exec: Option<&ExecutionResult>,
    deps: &SessionDeps,
) -> Result<(QualityReport, RewardBreakdown), RewardError> {
    let doc = parse_script(script);
    let lint = static_lint(&doc, &deps.catalog);
    let probe = match exec {
        Some(e) => probe_verdict(e, &doc),
        None => SyntaxVerdict {
            executable: false,
            first_error: Some(Diagnostic::error(DiagCode::EmptyScript, "no script found in the response", None)),
        },
    };
    let (rules, summary) = rules_and_summary(script, &probe, exec, &deps.tolerance);
    let (judged, judge_error) = match &deps.judge_llm {
        Some(c) => match deps.judge.judge(c, task_q, script, &summary) {
            Ok(j) => (Some(j), None),
            Err(e) => (None, Some(e.to_string())),
        },
        None => (None, None),
    };
    let indicators = assemble_indicators(&rules, &lint, &probe, judged.as_ref());
    let reward = RewardBreakdown::compute(r_format, &indicators, &deps.reward)?;
    Ok((QualityReport { rules, judged, judge_error, indicators }, reward))
}

fn potentials_summary(report: &PotentialCheckReport) -> Value {
    json!({
        "available": report.available.iter().map(|(r, _)| r.file_name.as_str()).collect::<Vec<_>>(),
        "missing": report.missing.iter().map(|r| r.file_name.as_str()).collect::<Vec<_>>(),
        "recommendations": report.recommendations.iter().map(|(name, recs)| {
            (name.clone(), recs.iter().map(|r| json!({ "file_name": r.record.file_name, "score": r.score })).collect::<Value>())
        }).collect::<serde_json::Map<_, _>>(),
    })
}

fn rel(path: &Path, base: &Path) -> PathBuf {
    path.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| path.to_path_buf())
}

/// Copy of `exec` with every path made relative to `base`.
fn relativize(exec: &ExecutionResult, base: &Path) -> ExecutionResult {
    let mut out = exec.clone();
    out.workdir = rel(&exec.workdir, base);
    out.stdout_path = rel(&exec.stdout_path, base);
    out.stderr_path = rel(&exec.stderr_path, base);
    out.artifacts.log_file = exec.artifacts.log_file.as_deref().map(|p| rel(p, base));
    for (dst, src) in [
        (&mut out.artifacts.dump_files, &exec.artifacts.dump_files),
        (&mut out.artifacts.data_files, &exec.artifacts.data_files),
        (&mut out.artifacts.other, &exec.artifacts.other),
    ] {
        *dst = src.iter().map(|p| rel(p, base)).collect();
    }
    out
}

fn write_trajectory(traj: &Trajectory, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let text = serde_json::to_string_pretty(traj).map_err(std::io::Error::other)?;
    let tmp = dir.join(format!(".{TRAJECTORY_FILE}.tmp"));
    std::fs::write(&tmp, text)?;
    std::fs::rename(tmp, dir.join(TRAJECTORY_FILE))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateOutcome {
    pub script: String,
    pub format: FormatVerdict,
    /// `None` when nothing runnable was produced.
    pub exec: Option<ExecutionResult>,
}

impl CandidateOutcome {
    pub fn succeeded(&self) -> bool {
        self.exec.as_ref().is_some_and(|e| e.status == ExecStatus::Success)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtKResult {
    pub success: bool,
    pub per_candidate: Vec<CandidateOutcome>,
}

#[derive(Debug, Error)]
pub enum AtKError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

/// `k` single-shot drafts (no repair), each executed; succeeds when any run
/// finishes with status success. Runs share the executor's parallelism bound.
pub fn exec_success_at_k(task_q: &str, k: usize, deps: &SessionDeps, run_id: &str) -> Result<AtKResult, AtKError> {
    if k == 0 {
        return Err(AtKError::ZeroK);
    }
    let drafts = deps.writer.draft(&deps.llm, task_q, None, k)?;
    let results: Vec<Result<CandidateOutcome, ExecError>> = std::thread::scope(|s| {
        let handles: Vec<_> = drafts
            .into_iter()
            .enumerate()
            .map(|(i, d)| {
                s.spawn(move || {
                    let exec = if d.script.trim().is_empty() {
                        None
                    } else {
                        let loc = RunLocation::new(run_id, 0, format!("candidate-{i}"));
                        Some(deps.executor.execute(&d.script, &loc)?)
                    };
                    Ok(CandidateOutcome { script: d.script, format: d.format, exec })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("candidate thread panicked")).collect()
    });
    let per_candidate = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(AtKResult { success: per_candidate.iter().any(CandidateOutcome::succeeded), per_candidate })
}

#[cfg(test)]
mod tests;

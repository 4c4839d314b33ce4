use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;
use std::sync::Arc;
use std::time::Instant;

use mdforge_core::agent::{
    evaluate_offline, run_session, valid_session_id, AgentError, Checkpoint, CheckpointError, HitlMode, PauseInfo,
    ResumeMessage, Terminal, Trajectory,
};
use mdforge_core::bench::{
    load_human_scores, load_items, run_codegen_bench, run_qa_bench, BenchError, BenchItem, MultiMode, QaBenchConfig,
};
use mdforge_core::config::Config;
use mdforge_core::exec::{summarize, ExecError, ExecStatus, Executor, RunLocation};
use mdforge_core::llm::{ChatParams, LlmError};
use mdforge_core::potentials::{check_script_potentials, find_similar, RegistryHandle};
use mdforge_core::reward::RewardError;
use mdforge_core::script::{parse_script, static_lint, Severity};
use mdforge_core::thermo::{parse_thermo, write_plots, ThermoError};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::app::{
    build_deps, judge_client, load_registry, new_session_id, open_session, read_text, writer_client, AppError, Profile,
};
use crate::cli::{
    BenchCommand, Cli, Command, EvaluateArgs, GenerateArgs, HitlArg, LoopArgs, MultiArg, PlotArgs, PotentialsCommand,
    RunArgs,
};

#[derive(Debug, Error)]
pub enum CmdError {
    #[error(transparent)]
    App(#[from] AppError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("{0}")]
    Thermo(#[from] ThermoError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
}

impl CmdError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CmdError::Usage(_) => 2,
            _ => 1,
        }
    }
}

/// What a command prints. `failed` turns a completed command into exit 1
/// (a run that did not succeed, for instance).
#[derive(Debug, Default)]
pub struct Output {
    pub json: Value,
    pub text: String,
    pub failed: bool,
}

impl Output {
    fn new(value: impl Serialize, text: String) -> Self {
        Self { json: serde_json::to_value(value).unwrap_or(Value::Null), text, failed: false }
    }
}

/// Config from the global flags: file or environment, then overrides.
pub fn load_config(cli: &Cli) -> Result<Config, CmdError> {
    let mut cfg = Config::load(cli.config.as_deref()).map_err(AppError::from)?;
    if let Some(dir) = &cli.potentials {
        cfg.registry.potentials_dir = dir.clone();
    }
    if let Some(dir) = &cli.workdir {
        cfg.runner.workdir_root = dir.clone();
    }
    Ok(cfg)
}

/// Runs every command except `serve`.
pub fn dispatch(cli: &Cli, cfg: &Config) -> Result<Output, CmdError> {
    let profile = Profile::resolve(cli.profile);
    match &cli.command {
        Command::Generate(a) => generate(cfg, profile, a),
        Command::Loop(a) => run_loop(cfg, profile, a),
        Command::Run(a) => run_script(cfg, profile, a),
        Command::Evaluate(a) => evaluate(cfg, profile, a),
        Command::Potentials(c) => potentials(cfg, c),
        Command::Bench(c) => bench(cfg, profile, c),
        Command::Plot(a) => plot(a),
        Command::Serve(_) => Err(CmdError::Usage("serve is handled by the binary".into())),
    }
}

fn generate(cfg: &Config, profile: Profile, a: &GenerateArgs) -> Result<Output, CmdError> {
    if a.k == 0 {
        return Err(CmdError::Usage("--k must be at least 1".into()));
    }
    let deps = build_deps(cfg, profile)?;
    let drafts = deps.writer.draft(&deps.llm, &a.task, None, a.k)?;
    let registry = deps.registry.snapshot();
    let run_id = format!("generate-{}", new_session_id());
    let mut out = Vec::new();
    let mut text = String::new();
    for (i, d) in drafts.iter().enumerate() {
        let doc = parse_script(&d.script);
        let lint = static_lint(&doc, &deps.catalog);
        let pots = check_script_potentials(&doc, &registry, deps.top_k, &deps.similarity);
        let run = match a.execute && !d.script.trim().is_empty() {
            true => {
                let result = deps.executor.execute(&d.script, &RunLocation::new(&run_id, 0, format!("candidate-{i}")))?;
                Some(summarize(&result, result.thermo().as_ref()))
            }
            false => None,
        };
        let errors = lint.iter().filter(|d| d.severity == Severity::Error).count();
        let _ = write!(
            text,
            "## candidate {i}: format {}, {errors} lint error(s), {} missing potential(s)",
            d.format.value,
            pots.missing.len()
        );
        if let Some(r) = &run {
            let _ = write!(text, ", run {}", r.status);
        }
        let _ = writeln!(text, "\n{}", d.script.trim_end());
        out.push(json!({
            "index": i,
            "script": d.script,
            "format": d.format,
            "lint": lint,
            "potentials": pots,
            "run": run,
        }));
    }
    Ok(Output::new(json!({ "task": a.task, "candidates": out }), text))
}

/// Resumes typed on stdin. End of input approves.
struct StdinCheckpoint;

impl Checkpoint for StdinCheckpoint {
    fn wait(&self, pause: &PauseInfo, _deadline: Option<Instant>) -> Result<ResumeMessage, CheckpointError> {
        eprintln!("-- paused ({:?}) at iteration {}:\n{}", pause.point, pause.iteration, pause.script.trim_end());
        eprintln!("-- approve | abort | directive TEXT | script PATH | set NAME=VALUE; blank line continues");
        let mut msg = ResumeMessage::default();
        for line in std::io::stdin().lock().lines() {
            let Ok(line) = line else { break };
            let line = line.trim();
            let (word, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let rest = rest.trim();
            match word {
                "" | "approve" => break,
                "abort" => {
                    msg.abort = true;
                    break;
                }
                "directive" if !rest.is_empty() => msg.directive = Some(rest.to_string()),
                "script" => match std::fs::read_to_string(rest) {
                    Ok(s) => msg.script = Some(s),
                    Err(e) => eprintln!("-- cannot read {rest}: {e}"),
                },
                "set" => match rest.split_once('=') {
                    Some((k, v)) => {
                        msg.parameters.insert(k.trim().to_string(), v.trim().to_string());
                    }
                    None => eprintln!("-- expected set NAME=VALUE"),
                },
                _ => eprintln!("-- unrecognized: {line}"),
            }
        }
        Ok(msg)
    }
}

fn run_loop(cfg: &Config, profile: Profile, a: &LoopArgs) -> Result<Output, CmdError> {
    let mut scfg = cfg.session.clone();
    if let Some(n) = a.max_outer {
        scfg.max_outer_iters = n;
    }
    if let Some(h) = a.hitl {
        scfg.hitl_mode = match h {
            HitlArg::Off => HitlMode::Off,
            HitlArg::PauseBeforeRun => HitlMode::PauseBeforeRun,
            HitlArg::PauseEachStep => HitlMode::PauseEachStep,
        };
    }
    if a.seed.is_some() {
        scfg.seed = a.seed;
    }
    let id = a.session_id.clone().unwrap_or_else(new_session_id);
    if !valid_session_id(&id) {
        return Err(CmdError::Usage(format!("invalid session id {id:?}")));
    }
    let base = build_deps(cfg, profile)?;
    let (deps, mut ctx) = open_session(&base, cfg, &id)?;
    if scfg.hitl_mode != HitlMode::Off {
        ctx = ctx.with_checkpoint(Arc::new(StdinCheckpoint));
    }
    let traj = run_session(&a.task, &scfg, &deps, &ctx)?;
    let mut out = Output::new(&traj, trajectory_text(&traj, &deps.session_dir(&id).display().to_string()));
    out.failed = traj.error.as_ref().is_some_and(|e| e.code == "DEP_FAILURE");
    Ok(out)
}

pub fn trajectory_text(traj: &Trajectory, dir: &str) -> String {
    let mut text = String::new();
    for it in &traj.iterations {
        let run = it.exec.as_ref().map_or("not run".to_string(), |e| e.status.to_string());
        let score = it.reward.as_ref().map_or("-".to_string(), |r| format!("{:.2}", r.score));
        let _ = writeln!(
            text,
            "iteration {}: {} draft(s), {run}, score {score}{}",
            it.iteration,
            it.inner_attempts,
            if it.accepted { ", accepted" } else { "" }
        );
    }
    let terminal = match traj.terminal {
        Terminal::Accepted => "accepted",
        Terminal::IterationCap => "iteration cap",
        Terminal::Aborted => "aborted",
    };
    let _ = writeln!(text, "terminal: {terminal}");
    if let Some(e) = &traj.error {
        let _ = writeln!(text, "error: {} {}", e.code, e.message);
    }
    if let Some(q) = &traj.rewritten_q {
        let _ = writeln!(text, "recycled as: {q}");
    }
    let _ = writeln!(text, "session dir: {dir}");
    text
}

fn executor(cfg: &Config, profile: Profile, timeout_s: Option<f64>) -> Result<Executor, CmdError> {
    let mut rc = cfg.runner.clone();
    if let Some(t) = timeout_s {
        rc.timeout_s = t;
    }
    let registry = Arc::new(RegistryHandle::new(load_registry(cfg, false)?));
    Ok(Executor::for_profile(profile.runner(), rc)?.with_registry(registry))
}

fn run_script(cfg: &Config, profile: Profile, a: &RunArgs) -> Result<Output, CmdError> {
    let script = read_text(&a.script)?;
    let exec = executor(cfg, profile, a.timeout_s)?;
    if a.probe {
        let verdict = exec.launch_probe_scratch(&script)?;
        let text = match &verdict.first_error {
            None => "executable\n".to_string(),
            Some(d) => format!("not executable: {d}\n"),
        };
        let mut out = Output::new(&verdict, text);
        out.failed = !verdict.executable;
        return Ok(out);
    }
    let result = exec.execute_scratch(&script)?;
    let summary = summarize(&result, result.thermo().as_ref());
    let mut text = format!("status: {}\nruntime: {:.2} s\nworkdir: {}\n", result.status, result.wall_time_s, result.workdir.display());
    if let Some(e) = &summary.error {
        let _ = writeln!(text, "error: {e}");
    }
    if !summary.rule_flags.is_empty() {
        let flags: Vec<String> = summary.rule_flags.iter().map(ToString::to_string).collect();
        let _ = writeln!(text, "flags: {}", flags.join(", "));
    }
    for (k, v) in &summary.key_observables {
        let _ = writeln!(text, "{k}: {v}");
    }
    let mut out = Output::new(json!({ "result": result, "summary": summary }), text);
    out.failed = result.status != ExecStatus::Success;
    Ok(out)
}

fn evaluate(cfg: &Config, profile: Profile, a: &EvaluateArgs) -> Result<Output, CmdError> {
    let text = read_text(&a.script)?;
    if !a.log.is_file() {
        return Err(CmdError::Failed(format!("{}: no such log file", a.log.display())));
    }
    let deps = build_deps(cfg, profile)?;
    let ev = evaluate_offline(&a.task, &text, &a.log, &deps)?;
    let r = &ev.reward;
    let mut out = format!(
        "r_format: {}\nr_raw: {:.4}\nr_correct: {:.4}\nr_total: {:.4}\nscore: {:.2}\n",
        r.r_format, r.r_raw, r.r_correct, r.r_total, r.score
    );
    let flags: Vec<String> = ev.quality.rules.anomaly_flags.iter().map(ToString::to_string).collect();
    if !flags.is_empty() {
        let _ = writeln!(out, "flags: {}", flags.join(", "));
    }
    if let Some(e) = &ev.quality.judge_error {
        let _ = writeln!(out, "judge error: {e}");
    }
    Ok(match a.detail {
        true => Output::new(&ev, out),
        false => Output::new(&ev.reward, out),
    })
}

fn potentials(cfg: &Config, c: &PotentialsCommand) -> Result<Output, CmdError> {
    let registry = load_registry(cfg, true)?;
    let weights = &cfg.registry.similarity;
    match c {
        PotentialsCommand::List => {
            let text = registry
                .records()
                .iter()
                .map(|r| format!("{}\t{}\t{}\t{}\n", r.file_name, r.family, r.elements.join(" "), r.size_bytes))
                .collect();
            Ok(Output::new(registry.records(), text))
        }
        PotentialsCommand::Info { name, lines } => {
            let info = registry
                .info(name, *lines)
                .ok_or_else(|| CmdError::Failed(format!("{name} is not in {}", registry.dir().display())))?;
            let r = &info.record;
            let mut text = format!(
                "file: {}\npath: {}\nfamily: {}\nelements: {}\nsize: {} bytes\n",
                r.file_name,
                r.path.display(),
                r.family,
                r.elements.join(" "),
                r.size_bytes
            );
            for line in &info.head {
                let _ = writeln!(text, "| {line}");
            }
            Ok(Output::new(&info, text))
        }
        PotentialsCommand::Find { query, k } => {
            let k = k.unwrap_or(cfg.registry.top_k);
            if k == 0 {
                return Err(CmdError::Usage("--k must be at least 1".into()));
            }
            let recs = find_similar(query, &registry, k, weights);
            let text = recs.iter().map(|r| format!("{}\t{:.4}\n", r.record.file_name, r.score)).collect();
            Ok(Output::new(&recs, text))
        }
        PotentialsCommand::Check { script } => {
            let doc = parse_script(&read_text(script)?);
            let report = check_script_potentials(&doc, &registry, cfg.registry.top_k, weights);
            let mut text = String::new();
            for (r, rec) in &report.available {
                let _ = writeln!(text, "available: {} (line {}) -> {}", r.file_name, r.line, rec.path.display());
            }
            for r in &report.missing {
                let closest: Vec<&str> = report
                    .recommendations
                    .get(&r.file_name)
                    .map(|v| v.iter().map(|c| c.record.file_name.as_str()).collect())
                    .unwrap_or_default();
                let _ = writeln!(text, "missing: {} (line {}); closest: {}", r.file_name, r.line, closest.join(", "));
            }
            if report.available.is_empty() && report.missing.is_empty() {
                text.push_str("no potential files referenced\n");
            }
            Ok(Output::new(&report, text))
        }
    }
}

fn items(paths: &[std::path::PathBuf]) -> Result<Vec<BenchItem>, CmdError> {
    let mut all = Vec::new();
    for p in paths {
        all.extend(load_items(p)?);
    }
    Ok(all)
}

fn bench(cfg: &Config, profile: Profile, c: &BenchCommand) -> Result<Output, CmdError> {
    let report = match c {
        BenchCommand::Qa { items: paths, repeats, multi_mode } => {
            let items = items(paths)?;
            let client = writer_client(cfg, profile)?;
            let judge = judge_client(cfg, profile)?;
            let qa = QaBenchConfig {
                repeats: repeats.unwrap_or(cfg.bench.repeats),
                multi_mode: match multi_mode {
                    Some(MultiArg::Jaccard) => MultiMode::Jaccard,
                    Some(MultiArg::Strict) => MultiMode::Strict,
                    None => cfg.bench.multi_mode,
                },
                params: ChatParams {
                    temperature: cfg.backend.temperature,
                    max_tokens: cfg.backend.max_tokens,
                    ..ChatParams::default()
                },
                parallelism: cfg.bench.parallelism,
            };
            run_qa_bench(&items, &client, judge.as_ref(), &qa)?
        }
        BenchCommand::Codegen { items: paths, k, human } => {
            let items = items(paths)?;
            let human = match human {
                Some(p) => load_human_scores(p)?,
                None => BTreeMap::new(),
            };
            let deps = build_deps(cfg, profile)?;
            run_codegen_bench(&items, &deps, k.unwrap_or(cfg.bench.k), &human)?
        }
    };
    let text = report.render_table();
    Ok(Output::new(&report, text))
}

fn plot(a: &PlotArgs) -> Result<Output, CmdError> {
    let series = parse_thermo(&read_text(&a.log)?)?;
    let paths = write_plots(&series, &a.out).map_err(|source| AppError::Io { path: a.out.clone(), source })?;
    let text = paths.iter().map(|p| format!("{}\n", p.display())).collect();
    Ok(Output::new(&paths, text))
}

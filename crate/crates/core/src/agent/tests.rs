use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use super::*;
use crate::exec::{RunConfig, StubRunner};
use crate::llm::{BackendError, ChatRequest, FnBackend};
use crate::potentials::scan_registry;
use crate::reward::Dimension;

const GOOD: &str = "units metal\natom_style atomic\nlattice fcc 3.6\nregion box block 0 4 0 4 0 4\n\
create_box 1 box\ncreate_atoms 1 box\nmass 1 63.546\npair_style eam/alloy\n\
pair_coeff * * CuNi.eam.alloy Cu\nvelocity all create 300 12345\nfix 1 all nvt temp 300 300 0.1\n\
thermo 100\ndump d all atom 500 traj.dump\nrun 2000\n";

const BROKEN: &str = "units metal\natom_style atomic\nlattice fcc 3.6\nregion box block 0 4 0 4 0 4\n\
create_box 1 box\ncreate_atoms 1 box\nmass 1 63.546\nfrobnicate all 3\npair_style eam/alloy\n\
pair_coeff * * CuNi.eam.alloy Cu\nthermo 100\nrun 2000\n";

fn answer(script: &str) -> String {
    format!("<think>draft</think><answer>{}</answer>", serde_json::json!({ "lammps_code": script }))
}

fn judge_answer(false_dims: &[Dimension]) -> String {
    let body: serde_json::Map<String, Value> = Dimension::JUDGED
        .iter()
        .map(|d| (d.key().to_string(), json!({ "satisfied": !false_dims.contains(d), "rationale": "r" })))
        .collect();
    format!("<think>j</think><answer>{}</answer>", Value::Object(body))
}

type Script = Arc<dyn Fn(&ChatRequest) -> String + Send + Sync>;

fn client(f: Script) -> LlmClient {
    LlmClient::new(Arc::new(FnBackend::new(move |req: &ChatRequest, _| Ok::<_, BackendError>(f(req)))))
}

fn deps(root: &Path, llm: LlmClient) -> SessionDeps {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/potentials");
    let registry = Arc::new(RegistryHandle::new(scan_registry(&dir, &Default::default()).unwrap()));
    let cfg = RunConfig { workdir_root: root.to_path_buf(), ..RunConfig::default() };
    let executor = Executor::new(Arc::new(StubRunner::default()), cfg).unwrap().with_registry(registry.clone());
    SessionDeps::new(llm, Arc::new(executor), registry)
}

fn stages(ctx: &SessionContext) -> Vec<Stage> {
    ctx.events.snapshot().iter().map(|e| e.stage).collect()
}

#[test]
fn correct_first_try_is_accepted_at_once() {
    let root = tempfile::tempdir().unwrap();
    let d = deps(root.path(), client(Arc::new(|_| answer(GOOD))));
    let pool = Arc::new(TrajectoryPool::new(root.path().join("pool.jsonl")));
    let d = d.with_pool(pool.clone());
    let ctx = SessionContext::new("s1");
    let t = run_session("simulate copper", &SessionConfig::default(), &d, &ctx).unwrap();
    assert_eq!(t.terminal, Terminal::Accepted);
    assert_eq!(t.iterations.len(), 1);
    assert_eq!(t.final_reward().unwrap().score, 10.0);
    assert!(t.rewritten_q.is_none());
    assert_eq!(pool.count().unwrap(), 0);
    assert_eq!(stages(&ctx), vec![Stage::Generator, Stage::Runner, Stage::Evaluator, Stage::Terminal]);
    let exec = t.iterations[0].exec.as_ref().unwrap();
    assert!(exec.workdir.is_relative());
    assert!(root.path().join("s1").join(TRAJECTORY_FILE).exists());
}

#[test]
fn never_improving_writer_hits_the_cap_and_is_pooled() {
    let root = tempfile::tempdir().unwrap();
    let judge = client(Arc::new(|_| judge_answer(&Dimension::JUDGED)));
    let writer = client(Arc::new(|req| {
        if req.purpose == "rewriter" {
            "<think>r</think><answer>{\"rewritten_query\":\"simulate copper with a valid command set\"}</answer>".into()
        } else {
            answer(BROKEN)
        }
    }));
    let pool = Arc::new(TrajectoryPool::new(root.path().join("pool.jsonl")));
    let d = deps(root.path(), writer.clone()).with_judge(judge.clone()).with_pool(pool.clone());
    let cfg = SessionConfig::default();
    let ctx = SessionContext::new("cap");
    let t = run_session("simulate copper", &cfg, &d, &ctx).unwrap();
    assert_eq!(t.terminal, Terminal::IterationCap);
    assert_eq!(t.iterations.len(), cfg.max_outer_iters);
    assert!(t.iterations.iter().all(|it| it.inner_attempts == cfg.max_generator_inner_iters));
    assert!(t.iterations.iter().all(|it| it.exec.is_none()), "safety gate");
    assert!(!root.path().join("cap/1/run").exists());
    let records = pool.read_all().unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].original_query, "simulate copper");
    assert!(records[0].instruction.contains("simulate copper"));
    assert!(records[0].feedback.contains("UNKNOWN_COMMAND") || records[0].feedback.contains("NOT_EXECUTED"));
    let calls = writer.call_count() + judge.call_count();
    assert!(calls <= cfg.max_llm_calls(), "{calls} calls");
    assert!(stages_well_formed(&stages(&ctx), false));
    for e in ctx.events.snapshot().iter().filter(|e| e.stage == Stage::Runner) {
        assert_eq!(e.payload["executed"], false);
    }
}

#[test]
fn judge_protocol_retries_stay_within_the_call_bound() {
    let root = tempfile::tempdir().unwrap();
    // every judgement takes two calls, which uses up the budget before the
    // rewrite, so the rewrite falls back to plain concatenation
    let judge = client(Arc::new(|_| "not a verdict".to_string()));
    let writer = client(Arc::new(|req| if req.purpose == "rewriter" { "rewritten".into() } else { answer(BROKEN) }));
    let d = deps(root.path(), writer.clone()).with_judge(judge.clone());
    let cfg = SessionConfig {
        max_outer_iters: 3,
        max_generator_inner_iters: 1,
        recycle_threshold: Some(5.0),
        ..SessionConfig::default()
    };
    let t = run_session("task", &cfg, &d, &SessionContext::new("b")).unwrap();
    assert_eq!(t.terminal, Terminal::IterationCap);
    assert_eq!(judge.call_count(), 6);
    assert_eq!(writer.call_count() + judge.call_count(), cfg.max_llm_calls());
    let q = t.rewritten_q.unwrap();
    assert!(q.starts_with("task\n\n"), "{q}");
    let quality = t.iterations[0].quality.as_ref().unwrap();
    assert!(quality.judged.is_none() && quality.judge_error.is_some());
}

#[test]
fn edited_script_is_what_runs() {
    let root = tempfile::tempdir().unwrap();
    let d = deps(root.path(), client(Arc::new(|_| answer(GOOD))));
    let edited = GOOD.replace("run 2000", "run 500");
    let cp = Arc::new(QueueCheckpoint::new([ResumeMessage { script: Some(edited.clone()), ..Default::default() }]));
    let ctx = SessionContext::new("edit").with_checkpoint(cp.clone());
    let cfg = SessionConfig { hitl_mode: HitlMode::PauseBeforeRun, ..SessionConfig::default() };
    let t = run_session("task", &cfg, &d, &ctx).unwrap();
    assert_eq!(t.terminal, Terminal::Accepted);
    let ran = std::fs::read_to_string(root.path().join("edit/1/run/in.lammps")).unwrap();
    assert_eq!(ran, edited);
    let runner = ctx.events.snapshot().into_iter().find(|e| e.stage == Stage::Runner).unwrap();
    assert_eq!(runner.payload["script_sha"], sha256_hex(&edited));
    assert_eq!(cp.pauses().len(), 1);
    assert_eq!(
        stages(&ctx),
        vec![Stage::Generator, Stage::Hitl, Stage::Hitl, Stage::Runner, Stage::Evaluator, Stage::Terminal]
    );
    assert!(t.iterations[0].user_directives[0].starts_with("script replaced"));
}

#[test]
fn directive_reaches_the_next_writer_prompt() {
    let root = tempfile::tempdir().unwrap();
    let prompts = Arc::new(Mutex::new(Vec::new()));
    let seen = prompts.clone();
    let writer = client(Arc::new(move |req| {
        if req.purpose == "writer" {
            seen.lock().unwrap().push(req.user_text().to_string());
        }
        answer(GOOD)
    }));
    let judges = Arc::new(AtomicUsize::new(0));
    let j = judges.clone();
    let judge = client(Arc::new(move |_| {
        // first evaluation fails every judged dimension
        if j.fetch_add(1, Ordering::SeqCst) == 0 {
            judge_answer(&Dimension::JUDGED)
        } else {
            judge_answer(&[])
        }
    }));
    let d = deps(root.path(), writer).with_judge(judge);
    let directive = "use pair_style eam/alloy with a 1 fs timestep";
    let cp = Arc::new(QueueCheckpoint::new([
        ResumeMessage { directive: Some(directive.into()), ..Default::default() },
        ResumeMessage::approve(),
    ]));
    let ctx = SessionContext::new("dir").with_checkpoint(cp);
    let cfg = SessionConfig { hitl_mode: HitlMode::PauseEachStep, ..SessionConfig::default() };
    let t = run_session("task", &cfg, &d, &ctx).unwrap();
    assert_eq!(t.terminal, Terminal::Accepted);
    assert_eq!(t.iterations.len(), 2);
    let prompts = prompts.lock().unwrap();
    assert!(!prompts[0].contains(directive));
    assert!(prompts[1].contains(directive));
    assert!(stages_well_formed(&stages(&ctx), false));
}

#[test]
fn abort_on_resume_is_terminal_and_unpooled() {
    let root = tempfile::tempdir().unwrap();
    let pool = Arc::new(TrajectoryPool::new(root.path().join("pool.jsonl")));
    let d = deps(root.path(), client(Arc::new(|_| answer(BROKEN)))).with_pool(pool.clone());
    let cp = Arc::new(QueueCheckpoint::new([ResumeMessage { abort: true, ..Default::default() }]));
    let ctx = SessionContext::new("ab").with_checkpoint(cp);
    let cfg = SessionConfig { hitl_mode: HitlMode::PauseBeforeRun, ..SessionConfig::default() };
    let t = run_session("task", &cfg, &d, &ctx).unwrap();
    assert_eq!(t.terminal, Terminal::Aborted);
    assert_eq!(t.error.as_ref().unwrap().code, "USER_ABORT");
    assert_eq!(pool.count().unwrap(), 0);
    let s = stages(&ctx);
    assert_eq!(s.last(), Some(&Stage::Terminal));
    assert!(stages_well_formed(&s, true));
}

#[test]
fn backend_failure_aborts_with_terminal_event() {
    let root = tempfile::tempdir().unwrap();
    let llm = LlmClient::new(Arc::new(FnBackend::new(|_, _| Err(BackendError::Auth("bad key".into())))));
    let d = deps(root.path(), llm);
    let ctx = SessionContext::new("dep");
    let t = run_session("task", &SessionConfig::default(), &d, &ctx).unwrap();
    assert_eq!(t.terminal, Terminal::Aborted);
    assert_eq!(t.error.unwrap().code, "DEP_FAILURE");
    assert_eq!(stages(&ctx), vec![Stage::Terminal]);
    assert!(ctx.events.is_closed());
}

#[test]
fn same_seed_same_trajectory() {
    let run = || {
        let root = tempfile::tempdir().unwrap();
        let judge = client(Arc::new(|_| judge_answer(&[Dimension::CoreLogicAccuracy])));
        let d = deps(root.path(), client(Arc::new(|_| answer(GOOD)))).with_judge(judge);
        let ctx = SessionContext::new("rep");
        let cfg = SessionConfig { seed: Some(7), ..SessionConfig::default() };
        let t = run_session("task", &cfg, &d, &ctx).unwrap();
        let events: Vec<Value> = ctx.events.snapshot().iter().map(SessionEvent::without_timestamp).collect();
        (serde_json::to_string(&t).unwrap(), serde_json::to_string(&events).unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn session_timeout_aborts() {
    let root = tempfile::tempdir().unwrap();
    let d = deps(root.path(), client(Arc::new(|_| answer(GOOD))));
    let ctx = SessionContext::new("to").with_checkpoint(Arc::new(ChannelCheckpoint::new()));
    let cfg = SessionConfig {
        hitl_mode: HitlMode::PauseBeforeRun,
        session_timeout_s: Some(0.3),
        ..SessionConfig::default()
    };
    let t = run_session("task", &cfg, &d, &ctx).unwrap();
    assert_eq!(t.terminal, Terminal::Aborted);
    assert_eq!(t.error.unwrap().code, "SESSION_TIMEOUT");
}

#[test]
fn config_validation() {
    let r = RewardConfig::default();
    assert!(SessionConfig { max_outer_iters: 0, ..Default::default() }.validate(&r).is_err());
    assert!(SessionConfig { accept_threshold: 11.0, ..Default::default() }.validate(&r).is_err());
    assert!(SessionConfig::default().validate(&r).is_ok());
    assert_eq!(SessionConfig::default().recycle_threshold_for(&r), 3.5);
    assert_eq!(SessionConfig::default().max_llm_calls(), 25);
    let root = tempfile::tempdir().unwrap();
    let d = deps(root.path(), client(Arc::new(|_| answer(GOOD))));
    let cfg = SessionConfig { hitl_mode: HitlMode::PauseBeforeRun, ..Default::default() };
    assert!(run_session("t", &cfg, &d, &SessionContext::new("x")).is_err());
    assert!(run_session("t", &SessionConfig::default(), &d, &SessionContext::new("../x")).is_err());
}

#[test]
fn at_k_succeeds_when_any_candidate_runs() {
    let root = tempfile::tempdir().unwrap();
    let llm = LlmClient::new(Arc::new(FnBackend::new(|_, idx| {
        Ok::<_, BackendError>(if idx == 1 { answer(GOOD) } else { answer(BROKEN) })
    })));
    let d = deps(root.path(), llm);
    let r = exec_success_at_k("task", 3, &d, "k").unwrap();
    assert!(r.success);
    let ok: Vec<bool> = r.per_candidate.iter().map(CandidateOutcome::succeeded).collect();
    assert_eq!(ok, vec![false, true, false]);

    let llm = LlmClient::new(Arc::new(FnBackend::new(|_, _| Ok::<_, BackendError>(answer(BROKEN)))));
    let d = deps(root.path(), llm);
    assert!(!exec_success_at_k("task", 3, &d, "k2").unwrap().success);
    assert!(matches!(exec_success_at_k("task", 0, &d, "k3"), Err(AtKError::ZeroK)));
}

#[test]
fn offline_evaluation_of_a_clean_run() {
    let root = tempfile::tempdir().unwrap();
    let d = deps(root.path(), client(Arc::new(|_| unreachable!("no model calls offline"))));
    let exec = d.executor.execute(GOOD, &RunLocation::new("off", 1, "run")).unwrap();
    let log = exec.artifacts.log_file.clone().unwrap();
    let e = evaluate_offline("simulate copper", GOOD, &log, &d).unwrap();
    assert_eq!(e.reward.r_correct, 1.0);
    assert_eq!(e.format.value, 1);

    // a full response is held to the answer protocol
    let e = evaluate_offline("t", &format!("{} trailing", answer(GOOD)), &log, &d).unwrap();
    assert_eq!(e.format.value, 0);

    // a log that stops on lost atoms is not a valid result
    let lost = root.path().join("lost.log");
    std::fs::write(&lost, "ERROR: Lost atoms: original 4000 current 3990\n").unwrap();
    let e = evaluate_offline("t", GOOD, &lost, &d).unwrap();
    assert!(e.quality.rules.has(crate::thermo::AnomalyFlag::LostAtoms));
    assert!(e.reward.r_correct < 1.0);
}

//! Replays the worked melting example with a scripted writer and judge and
//! compares the event log with the committed golden copy.
//!
//! Set `MDFORGE_BLESS=1` to rewrite the golden file after an intended change.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use mdforge_core::agent::{run_session, SessionConfig, SessionContext, Stage, Terminal};
use mdforge_core::llm::ChatRequest;

use crate::common::{answer, client, fixtures, judge_answer, read_fixture, stub_deps};
use crate::Outcome;

const TASK: &str = "Using LAMMPS to simulate the melting process of a Cu-Ni nanoparticle.";
const GOLDEN: &str = "worked_example/events.golden.jsonl";

pub fn golden() -> Outcome {
    let final_script = read_fixture("scripts/worked_example_final.in");
    let first_draft = final_script.replace("CuNi.eam.alloy", "CuNi.eam");
    let writer = client(move |req: &ChatRequest| {
        let user = &req.messages.last().unwrap().content;
        if user.contains("Your previous script:") {
            answer(&final_script)
        } else {
            answer(&first_draft)
        }
    });
    // the first two evaluations find the physics lacking, the third is satisfied
    let judgements = Arc::new(AtomicUsize::new(0));
    let judge = client(move |_| judge_answer(judgements.fetch_add(1, Ordering::SeqCst) >= 2));

    let root = tempfile::tempdir().unwrap();
    let deps = stub_deps(root.path(), writer).with_judge(judge);
    let ctx = SessionContext::new("worked-example");
    let t = run_session(TASK, &SessionConfig::default(), &deps, &ctx).unwrap();
    let events = ctx.events.snapshot();

    let (g, r, e) = (Stage::Generator, Stage::Runner, Stage::Evaluator);
    let want = [g, g, r, e, g, r, e, g, r, e, Stage::Terminal];
    let stages: Vec<Stage> = events.iter().map(|e| e.stage).collect();
    if stages != want {
        return Outcome::Fail(format!("stage sequence {stages:?}"));
    }
    let first_rec = &events[0].payload["potentials"]["recommendations"]["CuNi.eam"][0]["file_name"];
    if first_rec != "CuNi.eam.alloy" {
        return Outcome::Fail(format!("step 1 recommendation {first_rec}"));
    }
    let first_eval = &events[3].payload;
    let score = first_eval["reward"]["score"].as_f64().unwrap_or(f64::NAN);
    if first_eval["accepted"] != false || score >= first_eval["accept_threshold"].as_f64().unwrap_or(0.0) {
        return Outcome::Fail(format!("first evaluation not below threshold: {score}"));
    }
    if t.terminal != Terminal::Accepted {
        return Outcome::Fail(format!("terminal {:?}", t.terminal));
    }

    let rendered: String = events
        .iter()
        .map(|e| serde_json::to_string(&e.without_timestamp()).unwrap() + "\n")
        .collect();
    let path = fixtures().join(GOLDEN);
    if std::env::var_os("MDFORGE_BLESS").is_some() {
        std::fs::write(&path, &rendered).unwrap();
    }
    let golden = std::fs::read_to_string(&path).unwrap_or_default();
    if golden != rendered {
        let line = golden.lines().zip(rendered.lines()).position(|(a, b)| a != b).map_or(0, |i| i + 1);
        return Outcome::Fail(format!("event log differs from {GOLDEN} (first differing line {line})"));
    }
    Outcome::Pass(format!(
        "11 events byte-identical to golden; step 1 recommends CuNi.eam.alloy; scores {:.2}, {:.2}, {:.2}",
        score,
        events[6].payload["reward"]["score"].as_f64().unwrap_or(f64::NAN),
        events[9].payload["reward"]["score"].as_f64().unwrap_or(f64::NAN)
    ))
}

//! Sessions that never reach the recycle threshold each leave exactly one
//! pool record, also when they finish concurrently.

use std::sync::Arc;

use mdforge_core::agent::{run_session, PoolRecord, SessionConfig, SessionContext, TrajectoryPool};
use mdforge_core::llm::ChatRequest;

use crate::common::{answer, client, judge_answer, stub_deps};
use crate::Outcome;

const SESSIONS: usize = 100;
const BROKEN: &str = "units metal\natom_style atomic\nlattice fcc 3.6\nregion box block 0 4 0 4 0 4\n\
create_box 1 box\ncreate_atoms 1 box\nmass 1 63.546\nfrobnicate all 3\npair_style eam/alloy\n\
pair_coeff * * CuNi.eam.alloy Cu\nthermo 100\nrun 2000\n";

pub fn hundred_sessions() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let writer = client(|req: &ChatRequest| {
        if req.purpose == "rewriter" {
            "<think>r</think><answer>{\"rewritten_query\": \"use only documented LAMMPS commands\"}</answer>".into()
        } else {
            answer(BROKEN)
        }
    });
    let pool_path = root.path().join("pool.jsonl");
    let pool = Arc::new(TrajectoryPool::new(&pool_path));
    let judge = client(|_| judge_answer(false));
    let deps = stub_deps(root.path(), writer).with_judge(judge).with_pool(pool.clone());
    let cfg = SessionConfig { max_outer_iters: 1, max_generator_inner_iters: 1, ..SessionConfig::default() };

    std::thread::scope(|s| {
        for w in 0..8 {
            let deps = &deps;
            let cfg = &cfg;
            s.spawn(move || {
                for i in (w..SESSIONS).step_by(8) {
                    let task = format!("simulate copper, variant {i:03}");
                    run_session(&task, cfg, deps, &SessionContext::new(format!("low-{i:03}"))).unwrap();
                }
            });
        }
    });

    let text = std::fs::read_to_string(&pool_path).unwrap();
    let mut bad = Vec::new();
    let mut queries = std::collections::BTreeSet::new();
    let lines: Vec<&str> = text.lines().collect();
    for (n, line) in lines.iter().enumerate() {
        match serde_json::from_str::<PoolRecord>(line) {
            Ok(r) => {
                let complete = !r.original_query.is_empty()
                    && r.instruction.contains(&r.original_query)
                    && r.instruction != r.original_query
                    && r.code == BROKEN
                    && !r.feedback.is_empty()
                    && r.reward.is_finite();
                if !complete {
                    bad.push(format!("line {}: incomplete record", n + 1));
                }
                queries.insert(r.original_query);
            }
            Err(e) => bad.push(format!("line {}: {e}", n + 1)),
        }
    }
    if lines.len() == SESSIONS && queries.len() == SESSIONS && bad.is_empty() {
        Outcome::Pass(format!("{SESSIONS} sessions on 8 threads, {} parseable complete records", lines.len()))
    } else {
        Outcome::Fail(format!("{} lines, {} distinct queries; {}", lines.len(), queries.len(), bad.join("; ")))
    }
}

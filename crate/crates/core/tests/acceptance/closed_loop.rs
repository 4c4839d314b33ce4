//! A scripted writer seeds one fault per task and repairs it only when the
//! matching diagnostic shows up in its feedback. Single-shot sampling never
//! sees feedback; the session loop does.

use std::time::Instant;

use mdforge_core::agent::{exec_success_at_k, run_session, SessionConfig, SessionContext, Terminal};
use mdforge_core::llm::ChatRequest;

use crate::common::{answer, client, previous_of, stub_deps, task_of};
use crate::Outcome;

const TASKS: usize = 30;

#[derive(Clone, Copy)]
enum Fault {
    MissingPotential,
    UnknownCommand,
    UnstableTimestep,
}

fn task_text(i: usize) -> String {
    let (element, _) = material(i);
    format!("task-{i:02}: equilibrate bulk fcc {element} at {} K in the NVT ensemble", temperature(i))
}

fn task_index(task: &str) -> usize {
    task.strip_prefix("task-").and_then(|r| r.get(..2)).and_then(|n| n.parse().ok()).expect("task id")
}

fn temperature(i: usize) -> usize {
    300 + 20 * i
}

fn material(i: usize) -> (&'static str, &'static str) {
    if i % 2 == 0 {
        ("Cu", "CuNi.eam.alloy")
    } else {
        ("Al", "AlCu.eam.alloy")
    }
}

fn fault(i: usize) -> Fault {
    [Fault::MissingPotential, Fault::UnknownCommand, Fault::UnstableTimestep][i % 3]
}

fn clean_script(i: usize) -> String {
    let (element, potential) = material(i);
    let (a, m) = if element == "Cu" { (3.615, 63.546) } else { (4.05, 26.98) };
    let t = temperature(i);
    format!(
        "units metal\natom_style atomic\nlattice fcc {a}\nregion box block 0 4 0 4 0 4\ncreate_box 1 box\n\
         create_atoms 1 box\nmass 1 {m}\npair_style eam/alloy\npair_coeff * * {potential} {element}\n\
         velocity all create {t} {}\nfix 1 all nvt temp {t} {t} 0.1\ntimestep 0.001\nthermo 100\n\
         dump d all atom 500 traj.dump\nrun 2000\n",
        1000 + i
    )
}

fn first_draft(i: usize) -> String {
    let clean = clean_script(i);
    match fault(i) {
        Fault::MissingPotential => clean.replace(".eam.alloy", ".eam"),
        Fault::UnknownCommand => clean.replace("velocity all", "velocty all"),
        Fault::UnstableTimestep => clean.replace("timestep 0.001", "timestep 0.02"),
    }
}

/// Applies only the repairs whose diagnostic appears in `problems`.
fn repair(script: &str, problems: &str) -> String {
    let mut out = script.to_string();
    if problems.contains("[MISSING_FILE]") {
        for line in problems.lines().filter(|l| l.contains("[MISSING_FILE]")) {
            let missing = line.split("potential file ").nth(1).and_then(|r| r.split(' ').next());
            let closest = line.split("closest available: ").nth(1).and_then(|r| r.split(' ').next());
            if let (Some(missing), Some(closest)) = (missing, closest) {
                out = out.replace(&format!(" {missing} "), &format!(" {closest} "));
            }
        }
    }
    if problems.contains("[UNKNOWN_COMMAND]") {
        out = out.replace("velocty ", "velocity ");
    }
    if problems.contains("[LOST_ATOMS]") || problems.contains("[TEMP_DIVERGENCE]") {
        out = out.replace("timestep 0.02", "timestep 0.001");
    }
    out
}

fn writer(req: &ChatRequest) -> String {
    match previous_of(req) {
        Some((script, problems)) => answer(&repair(&script, &problems)),
        None => answer(&first_draft(task_index(task_of(req)))),
    }
}

pub fn gain() -> Outcome {
    let start = Instant::now();
    let root = tempfile::tempdir().unwrap();
    let deps = stub_deps(root.path(), client(writer));

    let mut single_shot = 0;
    for i in 0..TASKS {
        let r = exec_success_at_k(&task_text(i), 3, &deps, &format!("at3-{i:02}")).unwrap();
        single_shot += usize::from(r.success);
    }

    let cfg = SessionConfig { max_outer_iters: 5, ..SessionConfig::default() };
    let mut accepted = 0;
    let mut outer_used = Vec::new();
    for i in 0..TASKS {
        let t = run_session(&task_text(i), &cfg, &deps, &SessionContext::new(format!("loop-{i:02}"))).unwrap();
        if t.terminal == Terminal::Accepted {
            accepted += 1;
            outer_used.push(t.iterations.len());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let at3 = single_shot as f64 / TASKS as f64;
    let loop_rate = accepted as f64 / TASKS as f64;
    let summary = format!(
        "single-shot ExecSucc@3 {:.1}%, session acceptance {:.1}% (max {} outer iterations used), {secs:.1}s",
        100.0 * at3,
        100.0 * loop_rate,
        outer_used.iter().max().copied().unwrap_or(0)
    );
    if at3 <= 0.20 && loop_rate >= 0.80 && secs < 60.0 {
        Outcome::Pass(summary)
    } else {
        Outcome::Fail(summary)
    }
}

//! Acceptance suite: one line per criterion, exit status 1 if any fails.
//! Runs without a network, a language model or LAMMPS; criterion 10 needs
//! a real `lmp` and reports SKIP otherwise.

mod worked_example;
mod bench;
mod closed_loop;
mod common;
mod lammps;
mod logs;
mod pool;
mod reward;
mod script;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

pub enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Criterion = (u8, &'static str, fn() -> Outcome);

const CRITERIA: &[Criterion] = &[
    (1, "reward oracle equivalence", reward::oracle_equivalence),
    (2, "reward bounds and monotonicity", reward::bounds_and_monotonicity),
    (3, "format reward decision table", reward::format_table),
    (4, "parser round trip and lint corpus", script::corpus),
    (5, "log diagnostics suite", logs::synthetic_suite),
    (6, "closed-loop gain analogue", closed_loop::gain),
    (7, "golden trajectory replay", worked_example::golden),
    (8, "trajectory pool", pool::hundred_sessions),
    (9, "bench math", bench::math),
    (10, "real LAMMPS integration", lammps::integration),
];

fn main() {
    // `cargo test -- <filter>` style arguments pick criteria by number
    let wanted: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut out = std::io::stdout();
    for (id, name, run) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Outcome::Fail(msg)
        });
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        writeln!(out, "criterion {id:>2} {tag} {name} ({secs:.2}s): {detail}").unwrap();
    }
    if failed > 0 {
        writeln!(out, "{failed} criterion(s) failed").unwrap();
        std::process::exit(1);
    }
}

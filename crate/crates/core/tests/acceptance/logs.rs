//! Synthetic logs with injected anomalies; the rule checks must raise
//! exactly the injected flags.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use mdforge_core::exec::{classify, ArtifactSet, ExecStatus, ExecutionResult};
use mdforge_core::script::parse_script;
use mdforge_core::thermo::{evaluate_rules, identify_sim_type, parse_thermo, AnomalyFlag, ToleranceConfig};

use crate::Outcome;

use AnomalyFlag::*;

const INJECTABLE: [AnomalyFlag; 6] = [NanValue, LostAtoms, EmptyDump, TempDivergence, EnergyDrift, PressureInconsistent];

fn injected_sets() -> Vec<BTreeSet<AnomalyFlag>> {
    let mut sets = vec![BTreeSet::new()];
    for i in 0..6 {
        sets.push(BTreeSet::from([INJECTABLE[i]]));
    }
    for i in 0..6 {
        for j in i + 1..6 {
            sets.push(BTreeSet::from([INJECTABLE[i], INJECTABLE[j]]));
        }
    }
    for extra in [vec![], vec![LostAtoms], vec![EmptyDump], vec![LostAtoms, EmptyDump]] {
        let mut s = BTreeSet::from([NoThermo]);
        s.extend(extra);
        sets.push(s);
    }
    let mut triples = Vec::new();
    for i in 0..6 {
        for j in i + 1..6 {
            for k in j + 1..6 {
                triples.push(BTreeSet::from([INJECTABLE[i], INJECTABLE[j], INJECTABLE[k]]));
            }
        }
    }
    sets.extend(triples.into_iter().take(14));
    sets
}

fn script(ensemble: &str, target: f64) -> String {
    let fix = match ensemble {
        "nvt" => format!("fix 1 all nvt temp {target} {target} 0.1"),
        "npt" => format!("fix 1 all npt temp {target} {target} 0.1 iso 0.0 0.0 1.0"),
        _ => "fix 1 all nve".to_string(),
    };
    format!(
        "units metal\natom_style atomic\nlattice fcc 3.6\nregion box block 0 4 0 4 0 4\ncreate_box 1 box\n\
         create_atoms 1 box\nmass 1 63.546\npair_style eam/alloy\npair_coeff * * CuNi.eam.alloy Cu\n\
         velocity all create {target} 4928459\n{fix}\nthermo 100\nrun 4000\n"
    )
}

fn log(flags: &BTreeSet<AnomalyFlag>, target: f64) -> String {
    let mut out = String::from("LAMMPS (29 Aug 2024)\nCreated 256 atoms\n");
    let lost = flags.contains(&LostAtoms);
    if !flags.contains(&NoThermo) {
        let rows = if lost { 28 } else { 40 };
        let base = -3.54 * 4000.0;
        out.push_str("Per MPI rank memory allocation (min/avg/max) = 3.1 | 3.1 | 3.1 Mbytes\n");
        out.push_str("   Step          Temp          E_pair         E_mol          TotEng         Press     \n");
        for i in 0..rows {
            let x = i as f64 / (rows - 1) as f64;
            let wobble = (i as f64).sin();
            let late = (x - 0.5).max(0.0) / 0.5;
            let temp = if flags.contains(&TempDivergence) && x >= 0.5 {
                target + (3000.0 - target) * late
            } else {
                target * (1.0 + 0.005 * wobble)
            };
            let etot = if flags.contains(&EnergyDrift) { base * (1.0 - 0.4 * late) } else { base * (1.0 + 1e-5 * wobble) };
            let press = if flags.contains(&PressureInconsistent) && x >= 0.5 { 5000.0 + 30.0 * wobble } else { 30.0 * wobble };
            let emol = if flags.contains(&NanValue) && i == rows - 5 { "-nan".to_string() } else { "0".to_string() };
            let _ = writeln!(out, "{:>8} {temp:>14.4} {:>14.4} {emol:>14} {etot:>14.4} {press:>14.4}", i * 100, etot * 0.97);
        }
    }
    if lost {
        out.push_str("ERROR: Lost atoms: original 4000 current 3991 (src/thermo.cpp:488)\nLast command: run 4000\n");
    } else {
        out.push_str("Loop time of 1.234 on 1 procs for 4000 steps with 4000 atoms\n\nTotal wall time: 0:00:01\n");
    }
    out
}

fn execution(dir: &Path, flags: &BTreeSet<AnomalyFlag>, log_text: &str, with_dump: bool) -> ExecutionResult {
    std::fs::create_dir_all(dir).unwrap();
    let log_file = dir.join("log.lammps");
    std::fs::write(&log_file, log_text).unwrap();
    std::fs::write(dir.join("stdout.txt"), log_text).unwrap();
    std::fs::write(dir.join("stderr.txt"), "").unwrap();
    let mut dump_files = Vec::new();
    if flags.contains(&EmptyDump) {
        std::fs::write(dir.join("empty.dump"), "").unwrap();
        dump_files.push(dir.join("empty.dump"));
    }
    if with_dump {
        let frame = "ITEM: TIMESTEP\n0\nITEM: NUMBER OF ATOMS\n1\nITEM: BOX BOUNDS pp pp pp\n0 1\n0 1\n0 1\nITEM: ATOMS id type x y z\n1 1 0 0 0\n";
        std::fs::write(dir.join("traj.dump"), frame.repeat(2)).unwrap();
        dump_files.push(dir.join("traj.dump"));
    }
    let exit_code = if flags.contains(&LostAtoms) { 1 } else { 0 };
    ExecutionResult {
        status: if exit_code == 0 { ExecStatus::Success } else { ExecStatus::RuntimeError },
        exit_code: Some(exit_code),
        wall_time_s: 1.0,
        workdir: dir.to_path_buf(),
        stdout_path: dir.join("stdout.txt"),
        stderr_path: dir.join("stderr.txt"),
        error_class: classify(Some(exit_code), "", log_text),
        error_excerpt: String::new(),
        artifacts: ArtifactSet { log_file: Some(log_file), dump_files, ..ArtifactSet::default() },
    }
}

pub fn synthetic_suite() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let sets = injected_sets();
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    let mut misses = Vec::new();
    let mut covered = BTreeSet::new();
    for (idx, want) in sets.iter().enumerate() {
        let ensemble = if want.contains(&PressureInconsistent) {
            "npt"
        } else {
            match (["nvt", "npt", "nve"][idx % 3], want.contains(&TempDivergence)) {
                ("nve", true) => "nvt",
                (e, _) => e,
            }
        };
        let target = [300.0, 600.0, 900.0][idx % 3];
        let text = log(want, target);
        let exec = execution(&root.path().join(idx.to_string()), want, &text, idx % 2 == 0);
        let sim = identify_sim_type(&parse_script(&script(ensemble, target)));
        let thermo = parse_thermo(&text).ok();
        let report = evaluate_rules(thermo.as_ref(), &sim, Some(&exec), &ToleranceConfig::default());
        let got = &report.anomaly_flags;
        tp += got.intersection(want).count();
        fp += got.difference(want).count();
        fneg += want.difference(got).count();
        covered.extend(want.iter().copied());
        if got != want {
            misses.push(format!("log {idx} ({ensemble}): injected {want:?}, raised {got:?}"));
        }
    }
    let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fneg == 0 { 1.0 } else { tp as f64 / (tp + fneg) as f64 };
    let summary = format!(
        "{} logs, {} of 7 flags covered, precision {:.3}, recall {:.3}",
        sets.len(),
        covered.len(),
        precision,
        recall
    );
    if sets.len() == 40 && covered.len() == AnomalyFlag::ALL.len() && misses.is_empty() {
        Outcome::Pass(summary)
    } else {
        Outcome::Fail(format!("{summary}; {}", misses.join("; ")))
    }
}

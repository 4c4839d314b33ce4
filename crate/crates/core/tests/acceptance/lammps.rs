//! Needs `lmp` on PATH and a directory with a real `CuNi.eam.alloy` in
//! `MDFORGE_LAMMPS_POTENTIALS`; the fixture potential is a placeholder that
//! LAMMPS cannot read.

use std::path::PathBuf;
use std::sync::Arc;

use mdforge_core::exec::{ExecStatus, Executor, RunConfig, RunLocation, SubprocessRunner};
use mdforge_core::potentials::{scan_registry, RegistryHandle};

use crate::common::read_fixture;
use crate::Outcome;

const POTENTIALS_ENV: &str = "MDFORGE_LAMMPS_POTENTIALS";

fn on_path(program: &str) -> bool {
    std::env::var_os("PATH").is_some_and(|paths| std::env::split_paths(&paths).any(|d| d.join(program).is_file()))
}

/// The final script cut to its first 1000 MD steps: everything before the
/// first production run, then `run 1000`.
fn truncated(script: &str) -> String {
    let mut out = String::new();
    for line in script.lines() {
        if line.trim_start().starts_with("run") && !line.split_whitespace().nth(1).is_some_and(|n| n == "0") {
            out.push_str("run 1000\n");
            break;
        }
        out.push_str(line);
        out.push('\n');
    }
    out
}

pub fn integration() -> Outcome {
    if !on_path("lmp") {
        return Outcome::Skip("no lmp binary on PATH".into());
    }
    let Some(dir) = std::env::var_os(POTENTIALS_ENV).map(PathBuf::from) else {
        return Outcome::Skip(format!("{POTENTIALS_ENV} not set"));
    };
    let registry = match scan_registry(&dir, &Default::default()) {
        Ok(r) if r.get("CuNi.eam.alloy").is_some() => Arc::new(RegistryHandle::new(r)),
        _ => return Outcome::Skip(format!("no CuNi.eam.alloy under {}", dir.display())),
    };
    let root = tempfile::tempdir().unwrap();
    let cfg = RunConfig { workdir_root: root.path().to_path_buf(), ..RunConfig::default() };
    let executor = Executor::new(Arc::new(SubprocessRunner::new(cfg.clone())), cfg).unwrap().with_registry(registry);

    let script = read_fixture("scripts/worked_example_final.in");
    let probe = executor.launch_probe(&script, &RunLocation::new("lammps", 0, "probe")).unwrap();
    if !probe.executable {
        return Outcome::Fail(format!("launch probe rejected the script: {probe:?}"));
    }
    let result = executor.execute(&truncated(&script), &RunLocation::new("lammps", 0, "run")).unwrap();
    let thermo = result.thermo();
    match (result.status, thermo) {
        (ExecStatus::Success, Some(t)) if !t.is_empty() => {
            Outcome::Pass(format!("probe executable; 1000-step run succeeded with {} thermo rows", t.rows.len()))
        }
        (status, _) => Outcome::Fail(format!("run ended {status} ({})", result.error_excerpt)),
    }
}

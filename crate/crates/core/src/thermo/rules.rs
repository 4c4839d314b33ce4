use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Ensemble, SimType, ThermoSeries};
use crate::exec::{ErrorClass, ExecStatus, ExecutionResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AnomalyFlag {
    NanValue,
    LostAtoms,
    EmptyDump,
    NoThermo,
    TempDivergence,
    EnergyDrift,
    PressureInconsistent,
}

impl AnomalyFlag {
    pub const ALL: [AnomalyFlag; 7] = [
        AnomalyFlag::NanValue,
        AnomalyFlag::LostAtoms,
        AnomalyFlag::EmptyDump,
        AnomalyFlag::NoThermo,
        AnomalyFlag::TempDivergence,
        AnomalyFlag::EnergyDrift,
        AnomalyFlag::PressureInconsistent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyFlag::NanValue => "NAN_VALUE",
            AnomalyFlag::LostAtoms => "LOST_ATOMS",
            AnomalyFlag::EmptyDump => "EMPTY_DUMP",
            AnomalyFlag::NoThermo => "NO_THERMO",
            AnomalyFlag::TempDivergence => "TEMP_DIVERGENCE",
            AnomalyFlag::EnergyDrift => "ENERGY_DRIFT",
            AnomalyFlag::PressureInconsistent => "PRESSURE_INCONSISTENT",
        }
    }

    /// Flags that make a run's results invalid.
    pub fn invalidates_result(self) -> bool {
        matches!(self, AnomalyFlag::NanValue | AnomalyFlag::LostAtoms | AnomalyFlag::EmptyDump | AnomalyFlag::NoThermo)
    }

    /// Flags that make a run physically unsound.
    pub fn breaks_physics(self) -> bool {
        matches!(self, AnomalyFlag::TempDivergence | AnomalyFlag::EnergyDrift | AnomalyFlag::PressureInconsistent)
    }
}

impl fmt::Display for AnomalyFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToleranceConfig {
    /// Fraction of the last segment used for tail statistics.
    pub tail_frac: f64,
    /// Relative temperature error allowed against the thermostat target.
    pub temp_rel: f64,
    /// Relative total-energy drift allowed over the tail window.
    pub energy_rel: f64,
    /// Absolute pressure deviation allowed under npt (pressure units of the run).
    pub press_abs: f64,
    pub energy_eps: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self { tail_frac: 0.25, temp_rel: 0.15, energy_rel: 0.05, press_abs: 500.0, energy_eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub value: bool,
    pub evidence: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleQualityReport {
    pub result_valid: Verdict,
    pub physically_sound: Verdict,
    pub anomaly_flags: BTreeSet<AnomalyFlag>,
    pub metrics: BTreeMap<String, f64>,
    /// Checks that were skipped and why.
    pub notes: Vec<String>,
}

impl RuleQualityReport {
    pub fn has(&self, flag: AnomalyFlag) -> bool {
        self.anomaly_flags.contains(&flag)
    }
}

/// Number of `ITEM: TIMESTEP` frames in a text dump file.
pub fn count_dump_frames(path: &Path) -> std::io::Result<usize> {
    let text = std::fs::read_to_string(path)?;
    Ok(text.lines().filter(|l| l.trim() == "ITEM: TIMESTEP").count())
}

/// Rule-based quality checks over the tail of the last thermo segment plus
/// execution artifacts. Missing inputs become flags or notes, never errors.
pub fn evaluate_rules(
    thermo: Option<&ThermoSeries>,
    sim: &SimType,
    exec: Option<&ExecutionResult>,
    tol: &ToleranceConfig,
) -> RuleQualityReport {
    let mut flags = BTreeSet::new();
    let mut metrics = BTreeMap::new();
    let mut notes = Vec::new();
    let mut valid_evidence = Vec::new();
    let mut sound_evidence = Vec::new();

    // robustness
    if let Some(exec) = exec {
        if exec.error_class == ErrorClass::LostAtoms {
            flags.insert(AnomalyFlag::LostAtoms);
            valid_evidence.push("log reports lost atoms".to_string());
        }
        if exec.status != ExecStatus::Success {
            valid_evidence.push(format!("run ended with status {}", exec.status));
        }
        for dump in &exec.artifacts.dump_files {
            if matches!(count_dump_frames(dump), Ok(0)) {
                flags.insert(AnomalyFlag::EmptyDump);
                let name = dump.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                valid_evidence.push(format!("dump file {name} has no frames"));
            }
        }
    }

    let series = thermo.filter(|s| !s.is_empty());
    match series {
        None => {
            flags.insert(AnomalyFlag::NoThermo);
            valid_evidence.push("no thermo output".to_string());
        }
        Some(series) => {
            let non_finite = series.rows.iter().flatten().filter(|v| !v.is_finite()).count();
            if non_finite > 0 {
                flags.insert(AnomalyFlag::NanValue);
                valid_evidence.push(format!("{non_finite} non-finite thermo value(s)"));
            }
            physics_checks(series, sim, tol, &mut flags, &mut metrics, &mut notes, &mut sound_evidence);
        }
    }

    let result_valid = !flags.iter().any(|f| f.invalidates_result())
        && exec.is_none_or(|e| e.status == ExecStatus::Success);
    // without thermo output there is nothing to vouch for the physics
    let physically_sound = !flags.iter().any(|f| f.breaks_physics()) && !flags.contains(&AnomalyFlag::NoThermo);
    if flags.contains(&AnomalyFlag::NoThermo) {
        sound_evidence.push("no thermo output to check".to_string());
    }
    RuleQualityReport {
        result_valid: Verdict { value: result_valid, evidence: valid_evidence },
        physically_sound: Verdict { value: physically_sound, evidence: sound_evidence },
        anomaly_flags: flags,
        metrics,
        notes,
    }
}

fn physics_checks(
    series: &ThermoSeries,
    sim: &SimType,
    tol: &ToleranceConfig,
    flags: &mut BTreeSet<AnomalyFlag>,
    metrics: &mut BTreeMap<String, f64>,
    notes: &mut Vec<String>,
    evidence: &mut Vec<String>,
) {
    let segment = series.last_segment_rows();
    let frac = if tol.tail_frac > 0.0 && tol.tail_frac <= 1.0 { tol.tail_frac } else { 1.0 };
    let tail_len = ((segment.len() as f64 * frac).ceil() as usize).clamp(1, segment.len().max(1));
    let tail = &segment[segment.len().saturating_sub(tail_len)..];
    if tail.is_empty() {
        return;
    }
    let col = |name: &str| series.column_index(name).map(|i| tail.iter().map(move |r| r[i]));

    // temperature control
    match (sim.target_temp, col("Temp")) {
        (Some(target), Some(temps)) => {
            if let Some(mean) = finite_mean(temps) {
                let rel = (mean - target).abs() / target.abs().max(f64::MIN_POSITIVE);
                metrics.insert("temp_mean_tail".into(), mean);
                metrics.insert("temp_rel_err".into(), rel);
                if rel > tol.temp_rel {
                    flags.insert(AnomalyFlag::TempDivergence);
                    evidence.push(format!("tail mean temperature {mean:.1} vs target {target:.1} (rel err {rel:.3})"));
                }
            }
        }
        (None, _) if sim.variable_target => notes.push("temperature check skipped: variable-valued target".into()),
        (None, _) => notes.push("temperature check skipped: no thermostat target".into()),
        (Some(_), None) => notes.push("temperature check skipped: no Temp column".into()),
    }

    // energy stability
    let equilibration = matches!(sim.ensemble, Ensemble::Nvt | Ensemble::Npt | Ensemble::Nve);
    if !equilibration {
        notes.push("energy check skipped: not an equilibration ensemble".into());
    } else if sim.ramped {
        notes.push("energy check skipped: ramped thermostat".into());
    } else if let Some(idx) = series.column_index("TotEng") {
        let (start, end) = (tail[0][idx], tail[tail.len() - 1][idx]);
        if start.is_finite() && end.is_finite() {
            let drift = (end - start).abs() / start.abs().max(tol.energy_eps);
            metrics.insert("energy_drift_rel".into(), drift);
            if drift > tol.energy_rel {
                flags.insert(AnomalyFlag::EnergyDrift);
                evidence.push(format!("total energy drifted {drift:.3} (relative) over the tail"));
            }
        }
    } else {
        notes.push("energy check skipped: no TotEng column".into());
    }

    // pressure consistency, npt only
    if sim.ensemble == Ensemble::Npt {
        match (sim.target_press, col("Press")) {
            (Some(target), Some(press)) => {
                if let Some(mean) = finite_mean(press) {
                    metrics.insert("press_mean_tail".into(), mean);
                    if (mean - target).abs() > tol.press_abs {
                        flags.insert(AnomalyFlag::PressureInconsistent);
                        evidence.push(format!("tail mean pressure {mean:.1} vs target {target:.1}"));
                    }
                }
            }
            _ => notes.push("pressure check skipped: no target or Press column".into()),
        }
    }
}

fn finite_mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.filter(|v| v.is_finite()).fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

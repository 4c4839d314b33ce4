use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::script::{Command, ScriptDocument};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ensemble {
    Nvt,
    Npt,
    Nve,
    Minimize,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimType {
    pub ensemble: Ensemble,
    /// End-of-ramp thermostat temperature; absent when variable-valued.
    pub target_temp: Option<f64>,
    pub target_press: Option<f64>,
    /// Thermostat start and stop temperatures differ.
    pub ramped: bool,
    /// The thermostat target is a `${...}`/`v_` reference.
    pub variable_target: bool,
}

impl SimType {
    pub fn unknown() -> Self {
        Self { ensemble: Ensemble::Unknown, target_temp: None, target_press: None, ramped: false, variable_target: false }
    }
}

const THERMOSTATS: &[&str] = &["langevin", "temp/berendsen", "temp/rescale", "temp/csvr", "temp/csld"];

/// Ensemble of the last `run`/`minimize` (or of the fixes still active at
/// the end when no run follows them).
pub fn identify_sim_type(doc: &ScriptDocument) -> SimType {
    let mut active: BTreeMap<&str, &Command> = BTreeMap::new();
    let mut last: Option<SimType> = None;
    let mut pending_fix_change = false;

    for cmd in &doc.commands {
        match cmd.name.as_str() {
            "fix" => {
                if let Some(id) = cmd.arg(0) {
                    active.insert(id, cmd);
                    pending_fix_change = true;
                }
            }
            "unfix" => {
                if let Some(id) = cmd.arg(0) {
                    active.remove(id);
                    pending_fix_change = true;
                }
            }
            "run" => {
                last = Some(from_fixes(&active));
                pending_fix_change = false;
            }
            "minimize" => {
                last = Some(SimType { ensemble: Ensemble::Minimize, ..SimType::unknown() });
                pending_fix_change = false;
            }
            _ => {}
        }
    }
    if pending_fix_change || last.is_none() {
        let tail = from_fixes(&active);
        if tail.ensemble != Ensemble::Unknown || last.is_none() {
            return tail;
        }
    }
    last.unwrap_or_else(SimType::unknown)
}

pub(crate) fn from_fixes(active: &BTreeMap<&str, &Command>) -> SimType {
    // most recently defined integrator wins
    let mut fixes: Vec<&Command> = active.values().copied().collect();
    fixes.sort_by_key(|c| c.line);
    let integrator = fixes.iter().rev().find(|c| matches!(c.arg(2), Some("nvt" | "npt" | "nve")));
    let Some(fix) = integrator else {
        return SimType::unknown();
    };
    match fix.arg(2) {
        Some("nvt") => with_temp(Ensemble::Nvt, keyword_pair(fix, &["temp"])),
        Some("npt") => {
            let mut sim = with_temp(Ensemble::Npt, keyword_pair(fix, &["temp"]));
            sim.target_press = keyword_pair(fix, &["iso", "aniso", "tri", "x"])
                .and_then(|(_, stop)| literal(stop));
            sim
        }
        _ => {
            // nve plus a separate thermostat behaves as a canonical run
            let thermostat = fixes.iter().rev().find(|c| c.arg(2).is_some_and(|s| THERMOSTATS.contains(&s)));
            match thermostat {
                Some(t) => with_temp(Ensemble::Nvt, Some((t.arg(3).unwrap_or(""), t.arg(4).unwrap_or("")))),
                None => SimType { ensemble: Ensemble::Nve, ..SimType::unknown() },
            }
        }
    }
}

fn with_temp(ensemble: Ensemble, pair: Option<(&str, &str)>) -> SimType {
    let mut sim = SimType { ensemble, ..SimType::unknown() };
    if let Some((start, stop)) = pair {
        sim.variable_target = is_variable(stop);
        sim.target_temp = literal(stop);
        sim.ramped = match (literal(start), literal(stop)) {
            (Some(a), Some(b)) => a != b,
            _ => start != stop,
        };
    }
    sim
}

/// The two values following the first matching keyword after the style.
fn keyword_pair<'a>(fix: &'a Command, keywords: &[&str]) -> Option<(&'a str, &'a str)> {
    let pos = fix.args.iter().skip(3).position(|a| keywords.contains(&a.as_str()))? + 3;
    Some((fix.arg(pos + 1)?, fix.arg(pos + 2)?))
}

fn literal(token: &str) -> Option<f64> {
    token.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn is_variable(token: &str) -> bool {
    token.contains('$') || token.starts_with("v_")
}

//! Text fed back to the writer between drafts. Every problem line starts
//! with a bracketed code so scripted writers (and humans) can key on it.

use std::fmt::Write as _;

use crate::exec::{ErrorClass, ExecStatus, ExecutionResult, SyntaxVerdict};
use crate::potentials::PotentialCheckReport;
use crate::reward::{Dimension, Indicators, RewardBreakdown};
use crate::script::Diagnostic;
use crate::thermo::RuleQualityReport;

fn diag_line(out: &mut String, d: &Diagnostic, origin: &str) {
    let at = d.line.map(|l| format!(" line {l}")).unwrap_or_default();
    let _ = writeln!(out, "- [{}]{at} ({origin}): {}", d.code, d.message);
}

/// Problems that keep a draft from converging: lint errors, the launch
/// probe's first error, and potential files missing from the library.
pub fn generator_problems(lint: &[Diagnostic], probe: &SyntaxVerdict, potentials: &PotentialCheckReport) -> String {
    let mut out = String::new();
    for d in lint.iter().filter(|d| d.is_error()) {
        diag_line(&mut out, d, "static check");
    }
    for r in &potentials.missing {
        let _ = write!(out, "- [MISSING_FILE] line {}: potential file {} is not available in the local library", r.line, r.file_name);
        match potentials.recommendations.get(&r.file_name).filter(|recs| !recs.is_empty()) {
            Some(recs) => {
                let names: Vec<String> =
                    recs.iter().map(|rec| format!("{} ({:.2})", rec.record.file_name, rec.score)).collect();
                let _ = writeln!(out, "; closest available: {}", names.join(", "));
            }
            None => out.push('\n'),
        }
    }
    if let Some(d) = &probe.first_error {
        let dup = potentials.missing.iter().any(|r| Some(r.line) == d.line) && d.code.as_str() == "MISSING_FILE";
        if !dup {
            diag_line(&mut out, d, "launch probe");
        }
    }
    out
}

/// Evaluation feedback: score, failed rubric dimensions with evidence,
/// anomaly flags and the run's error excerpt.
pub fn evaluator_feedback(
    reward: &RewardBreakdown,
    indicators: &Indicators,
    rules: &RuleQualityReport,
    exec: Option<&ExecutionResult>,
    accept_threshold: f64,
) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "- [SCORE] {:.2} against the acceptance threshold {:.2} (r_raw {:.2}, r_correct {:.3}, r_format {})",
        reward.score, accept_threshold, reward.r_raw, reward.r_correct, reward.r_format
    );
    for (i, dim) in Dimension::ALL.iter().enumerate() {
        if !indicators.bonuses.get(i).copied().unwrap_or(true) {
            let ev = indicators.bonus_evidence.get(i).map(String::as_str).unwrap_or("");
            let _ = writeln!(out, "- [{}] not met: {ev}", dim.key().to_uppercase());
        }
    }
    for flag in &rules.anomaly_flags {
        let _ = writeln!(out, "- [{flag}] detected in the run output");
    }
    for note in &rules.notes {
        let _ = writeln!(out, "  note: {note}");
    }
    match exec {
        Some(e) if e.status != ExecStatus::Success => {
            let code = e.error_class.diag_code().map_or("RUNTIME_ERROR", |c| c.as_str());
            let excerpt = crate::util::truncate_chars(e.error_excerpt.trim(), 600);
            let _ = writeln!(out, "- [{code}] run ended with status {}: {excerpt}", e.status);
        }
        Some(e) if e.error_class != ErrorClass::None => {
            let code = e.error_class.diag_code().map_or("RUNTIME_ERROR", |c| c.as_str());
            let _ = writeln!(out, "- [{code}] reported by the run");
        }
        Some(_) => {}
        None => {
            let _ = writeln!(out, "- [NOT_EXECUTED] the script did not pass the launch probe and was not run");
        }
    }
    out
}

/// Appends the user's directives to a problem list.
pub fn with_directives(problems: &str, directives: &[String]) -> String {
    if directives.is_empty() {
        return problems.to_string();
    }
    let mut out = problems.to_string();
    if !out.is_empty() && !out.ends_with('\n') {
        out.push('\n');
    }
    out.push_str("\nInstructions from the user:\n");
    for d in directives {
        let _ = writeln!(out, "- {d}");
    }
    out
}

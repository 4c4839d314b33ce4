use super::{Dimension, Indicators, JudgedDimensions};
use crate::exec::SyntaxVerdict;
use crate::script::{DiagCode, Diagnostic};
use crate::thermo::RuleQualityReport;

/// Lint findings that are deduction patterns for a judged dimension.
fn lint_deductions(dim: Dimension) -> &'static [DiagCode] {
    match dim {
        Dimension::LogicalCompleteness => &[DiagCode::PairCoeffBeforePairStyle],
        Dimension::CodeCompleteness => &[DiagCode::MissingRun, DiagCode::MissingOutput],
        _ => &[],
    }
}

/// One bonus and one penalty slot per rubric dimension. A dimension's bonus
/// is on when it is satisfied; its penalty is on when a deduction pattern
/// for it was detected, which here is exactly when the bonus is off.
///
/// Without a judge, dimensions 2-6 count as satisfied and say so in their
/// evidence, unless a lint deduction pattern applies.
pub fn assemble_indicators(
    rule: &RuleQualityReport,
    lint: &[Diagnostic],
    probe: &SyntaxVerdict,
    judged: Option<&JudgedDimensions>,
) -> Indicators {
    let mut bonuses = Vec::with_capacity(8);
    let mut evidence = Vec::with_capacity(8);
    for dim in Dimension::ALL {
        let (ok, why) = match dim {
            Dimension::SyntaxCorrectness => {
                let errors: Vec<String> = lint.iter().filter(|d| d.is_error()).map(|d| d.to_string()).collect();
                let mut why = Vec::new();
                if !probe.executable {
                    match &probe.first_error {
                        Some(e) => why.push(format!("probe failed: {e}")),
                        None => why.push("probe failed".to_string()),
                    }
                }
                why.extend(errors);
                (why.is_empty(), if why.is_empty() { "lint clean and probe executable".into() } else { why.join("; ") })
            }
            Dimension::ResultValidity => (rule.result_valid.value, joined(&rule.result_valid.evidence, "no robustness anomalies")),
            Dimension::PhysicalSoundness => {
                (rule.physically_sound.value, joined(&rule.physically_sound.evidence, "no physical anomalies"))
            }
            judged_dim => {
                let hits: Vec<String> = lint
                    .iter()
                    .filter(|d| lint_deductions(judged_dim).contains(&d.code))
                    .map(|d| d.to_string())
                    .collect();
                match judged.and_then(|j| j.dims.get(&judged_dim)) {
                    Some(v) if hits.is_empty() => (v.satisfied, v.rationale.clone()),
                    Some(v) => (false, format!("{}; {}", hits.join("; "), v.rationale)),
                    None if hits.is_empty() => (true, "unjudged".to_string()),
                    None => (false, format!("unjudged; {}", hits.join("; "))),
                }
            }
        };
        bonuses.push(ok);
        evidence.push(why);
    }
    let penalties: Vec<bool> = bonuses.iter().map(|b| !b).collect();
    Indicators { bonuses, penalties, bonus_evidence: evidence.clone(), penalty_evidence: evidence }
}

fn joined(items: &[String], fallback: &str) -> String {
    if items.is_empty() {
        fallback.to_string()
    } else {
        items.join("; ")
    }
}

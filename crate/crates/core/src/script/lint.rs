use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{CommandCatalog, ScriptDocument};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

/// Stable diagnostic identifiers. Also used for probe failures reported by
/// the execution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DiagCode {
    UnknownCommand,
    PairCoeffBeforePairStyle,
    MissingUnits,
    MissingRun,
    MissingOutput,
    UndefinedVariable,
    MassCountMismatch,
    UnterminatedQuote,
    // execution-derived
    MissingFile,
    LostAtoms,
    NumericFailure,
    RuntimeError,
    LaunchFailure,
    ProbeTimeout,
    EmptyScript,
}

impl DiagCode {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagCode::UnknownCommand => "UNKNOWN_COMMAND",
            DiagCode::PairCoeffBeforePairStyle => "PAIR_COEFF_BEFORE_PAIR_STYLE",
            DiagCode::MissingUnits => "MISSING_UNITS",
            DiagCode::MissingRun => "MISSING_RUN",
            DiagCode::MissingOutput => "MISSING_OUTPUT",
            DiagCode::UndefinedVariable => "UNDEFINED_VARIABLE",
            DiagCode::MassCountMismatch => "MASS_COUNT_MISMATCH",
            DiagCode::UnterminatedQuote => "UNTERMINATED_QUOTE",
            DiagCode::MissingFile => "MISSING_FILE",
            DiagCode::LostAtoms => "LOST_ATOMS",
            DiagCode::NumericFailure => "NUMERIC_FAILURE",
            DiagCode::RuntimeError => "RUNTIME_ERROR",
            DiagCode::LaunchFailure => "LAUNCH_FAILURE",
            DiagCode::ProbeTimeout => "PROBE_TIMEOUT",
            DiagCode::EmptyScript => "EMPTY_SCRIPT",
        }
    }
}

impl fmt::Display for DiagCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: DiagCode,
    pub message: String,
    pub line: Option<usize>,
}

impl Diagnostic {
    pub fn error(code: DiagCode, message: impl Into<String>, line: Option<usize>) -> Self {
        Self { severity: Severity::Error, code, message: message.into(), line }
    }

    pub fn warning(code: DiagCode, message: impl Into<String>, line: Option<usize>) -> Self {
        Self { severity: Severity::Warning, code, message: message.into(), line }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        match self.line {
            Some(line) => write!(f, "{sev} {} (line {line}): {}", self.code, self.message),
            None => write!(f, "{sev} {}: {}", self.code, self.message),
        }
    }
}

const OUTPUT_COMMANDS: &[&str] = &["thermo", "thermo_style", "dump"];

/// Pre-execution checks. Output is ordered by line (script-level findings
/// without a line sort last), then by code.
pub fn static_lint(doc: &ScriptDocument, catalog: &CommandCatalog) -> Vec<Diagnostic> {
    let mut diags = Vec::new();

    for issue in &doc.issues {
        diags.push(Diagnostic::warning(DiagCode::UnterminatedQuote, issue.message.clone(), Some(issue.line)));
    }

    let mut seen_pair_style = false;
    let mut defined_vars: BTreeSet<&str> = BTreeSet::new();
    for cmd in &doc.commands {
        if !catalog.contains(&cmd.name) {
            diags.push(Diagnostic::error(
                DiagCode::UnknownCommand,
                format!("unknown command `{}`", cmd.name),
                Some(cmd.line),
            ));
        }
        match cmd.name.as_str() {
            "pair_style" => seen_pair_style = true,
            "pair_coeff" if !seen_pair_style => diags.push(Diagnostic::error(
                DiagCode::PairCoeffBeforePairStyle,
                "pair_coeff used before any pair_style",
                Some(cmd.line),
            )),
            _ => {}
        }

        let mut reported = BTreeSet::new();
        for arg in &cmd.args {
            for var in variable_refs(arg) {
                if !defined_vars.contains(var) && reported.insert(var) {
                    diags.push(Diagnostic::warning(
                        DiagCode::UndefinedVariable,
                        format!("variable `{var}` is used before any definition"),
                        Some(cmd.line),
                    ));
                }
            }
        }
        // defined after its own line is checked, so `variable x equal ${x}+1` still warns
        if cmd.name == "variable" {
            if let Some(name) = cmd.args.first() {
                defined_vars.insert(name.as_str());
            }
        }
    }

    if doc.declared_units.is_none() {
        diags.push(Diagnostic::error(DiagCode::MissingUnits, "no units command", None));
    }
    if !doc.has_command("run") && !doc.has_command("minimize") {
        diags.push(Diagnostic::error(DiagCode::MissingRun, "neither run nor minimize is present", None));
    }
    let has_output = doc
        .commands
        .iter()
        .any(|c| OUTPUT_COMMANDS.contains(&c.name.as_str()) || c.name.starts_with("write_"));
    if !has_output {
        diags.push(Diagnostic::error(
            DiagCode::MissingOutput,
            "no output directive (thermo, dump or write_*)",
            None,
        ));
    }

    if let Some(diag) = mass_count_check(doc) {
        diags.push(diag);
    }

    diags.sort_by(|a, b| {
        a.line
            .unwrap_or(usize::MAX)
            .cmp(&b.line.unwrap_or(usize::MAX))
            .then(a.code.cmp(&b.code))
    });
    diags
}

/// `${name}` and single-character `$x` references in a token.
fn variable_refs(token: &str) -> Vec<&str> {
    let bytes = token.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'$' && i + 1 < bytes.len() {
            match bytes[i + 1] {
                b'{' => {
                    if let Some(end) = token[i + 2..].find('}') {
                        out.push(&token[i + 2..i + 2 + end]);
                        i += end + 3;
                        continue;
                    }
                }
                // immediate expression, not a variable
                b'(' => {}
                c if c.is_ascii_alphanumeric() || c == b'_' => out.push(&token[i + 1..i + 2]),
                _ => {}
            }
        }
        i += 1;
    }
    out
}

fn mass_count_check(doc: &ScriptDocument) -> Option<Diagnostic> {
    let create_box = doc.commands_named("create_box").last()?;
    let declared: usize = create_box.arg(0)?.parse().ok()?;
    let mut types = BTreeSet::new();
    let mut last_line = create_box.line;
    for cmd in doc.commands_named("mass") {
        let ty: usize = cmd.arg(0)?.parse().ok()?;
        types.insert(ty);
        last_line = last_line.max(cmd.line);
    }
    if types.is_empty() || types.len() == declared {
        return None;
    }
    Some(Diagnostic::warning(
        DiagCode::MassCountMismatch,
        format!("create_box declares {declared} atom types but mass is set for {}", types.len()),
        Some(last_line),
    ))
}

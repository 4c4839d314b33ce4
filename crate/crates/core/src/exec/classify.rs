use super::ErrorClass;
use crate::thermo::parse_thermo;
use crate::util::truncate_chars;

pub const EXCERPT_LIMIT: usize = 2000;

/// Pattern table, checked in order against stderr then the log.
const PATTERNS: &[(&str, ErrorClass)] = &[
    ("Lost atoms", ErrorClass::LostAtoms),
    ("Unknown command", ErrorClass::UnknownCommand),
    ("Unrecognized", ErrorClass::UnknownCommand),
    ("Cannot open", ErrorClass::MissingFile),
];

/// Error class as a pure function of the exit code and the two texts.
pub fn classify(exit_code: Option<i32>, stderr: &str, log: &str) -> ErrorClass {
    for (needle, class) in PATTERNS {
        if stderr.contains(needle) || log.contains(needle) {
            return *class;
        }
    }
    let non_finite = parse_thermo(log)
        .map(|t| t.rows.iter().flatten().any(|v| !v.is_finite()))
        .unwrap_or(false);
    if non_finite {
        return ErrorClass::NumericFailure;
    }
    let error_line = stderr.lines().chain(log.lines()).any(|l| l.trim_start().starts_with("ERROR"));
    if error_line || exit_code.is_some_and(|c| c != 0) {
        return ErrorClass::Other;
    }
    ErrorClass::None
}

/// The first `ERROR` line with a little trailing context, else the tail of
/// stderr. Bounded by [`EXCERPT_LIMIT`] characters.
pub fn error_excerpt(stderr: &str, log: &str) -> String {
    for text in [stderr, log] {
        let lines: Vec<&str> = text.lines().collect();
        if let Some(pos) = lines.iter().position(|l| l.contains("ERROR")) {
            let end = (pos + 3).min(lines.len());
            return truncate_chars(&lines[pos..end].join("\n"), EXCERPT_LIMIT);
        }
    }
    let lines: Vec<&str> = stderr.lines().filter(|l| !l.trim().is_empty()).collect();
    let tail = lines[lines.len().saturating_sub(10)..].join("\n");
    truncate_chars(&tail, EXCERPT_LIMIT)
}

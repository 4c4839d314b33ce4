use std::collections::BTreeSet;

use super::{extract_potential_refs, Command, ExtensionTable, ParseIssue, ScriptDocument, SimStyleHint};

/// Parses an input script with the default potential extension table.
pub fn parse_script(text: &str) -> ScriptDocument {
    parse_script_with(text, &ExtensionTable::default())
}

pub fn parse_script_with(text: &str, table: &ExtensionTable) -> ScriptDocument {
    let mut commands = Vec::new();
    let mut issues = Vec::new();

    for logical in logical_lines(text) {
        let (tokens, unterminated) = tokenize(&logical.joined);
        if unterminated {
            issues.push(ParseIssue {
                line: logical.line,
                message: "unterminated quote".to_string(),
            });
        }
        let mut tokens = tokens.into_iter();
        let Some(first) = tokens.next() else {
            continue;
        };
        commands.push(Command {
            name: first.to_lowercase(),
            args: tokens.collect(),
            raw: logical.raw,
            line: logical.line,
        });
    }

    let declared_units = commands
        .iter()
        .rev()
        .find(|c| c.name == "units")
        .and_then(|c| c.args.first().cloned());

    let mut sim_style_hints = BTreeSet::new();
    for cmd in &commands {
        match cmd.name.as_str() {
            "minimize" => {
                sim_style_hints.insert(SimStyleHint::Minimize);
            }
            "fix" => match cmd.arg(2) {
                Some("nvt") => {
                    sim_style_hints.insert(SimStyleHint::Nvt);
                }
                Some("npt") => {
                    sim_style_hints.insert(SimStyleHint::Npt);
                }
                Some("nve") => {
                    sim_style_hints.insert(SimStyleHint::Nve);
                }
                _ => {}
            },
            _ => {}
        }
    }

    let mut doc = ScriptDocument {
        source_text: text.to_string(),
        commands,
        potential_refs: Vec::new(),
        declared_units,
        sim_style_hints,
        issues,
    };
    doc.potential_refs = extract_potential_refs(&doc, table);
    doc
}

/// Renders commands one per line in normalized form (single spaces, no
/// comments, no continuations). Parsing the output yields the same tokens.
pub fn serialize_commands(commands: &[Command]) -> String {
    let mut out = String::new();
    for cmd in commands {
        out.push_str(&cmd.name);
        for arg in &cmd.args {
            out.push(' ');
            out.push_str(arg);
        }
        // a trailing continuation marker would swallow the next line
        if out.ends_with('&') || out.ends_with('\\') {
            out.push_str(" #");
        }
        out.push('\n');
    }
    out
}

struct LogicalLine {
    joined: String,
    raw: String,
    line: usize,
}

/// Joins continuation lines. The marker is the last printable character of a
/// physical line: `&` (LAMMPS) or `\` (commonly seen in pasted scripts).
fn logical_lines(text: &str) -> Vec<LogicalLine> {
    let mut out = Vec::new();
    let mut pending: Option<LogicalLine> = None;

    for (idx, physical) in text.lines().enumerate() {
        let trimmed = physical.trim_end();
        let continues = trimmed.ends_with('&') || trimmed.ends_with('\\');
        let body = if continues {
            &trimmed[..trimmed.len() - 1]
        } else {
            physical
        };

        let entry = pending.get_or_insert_with(|| LogicalLine {
            joined: String::new(),
            raw: String::new(),
            line: idx + 1,
        });
        if !entry.raw.is_empty() {
            entry.raw.push('\n');
            entry.joined.push(' ');
        }
        entry.raw.push_str(physical);
        entry.joined.push_str(body);

        if !continues {
            out.extend(pending.take());
        }
    }
    out.extend(pending);
    out
}

/// Splits on whitespace, honouring single, double and triple quotes, and
/// drops everything after an unquoted `#`. Returns whether a quote was left open.
fn tokenize(line: &str) -> (Vec<String>, bool) {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut in_token = false;
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;

    while i < chars.len() {
        let c = chars[i];
        if c == '#' {
            break;
        }
        if c.is_whitespace() {
            if in_token {
                tokens.push(std::mem::take(&mut current));
                in_token = false;
            }
            i += 1;
            continue;
        }
        if c == '"' || c == '\'' {
            let triple = c == '"' && chars[i..].starts_with(&['"', '"', '"']);
            let delim: &[char] = if triple { &['"', '"', '"'] } else { std::slice::from_ref(&chars[i]) };
            let open_len = delim.len();
            let start = i + open_len;
            let close = (start..=chars.len().saturating_sub(open_len))
                .find(|&j| chars[j..].starts_with(delim));
            match close {
                Some(end) => {
                    current.extend(&chars[i..end + open_len]);
                    in_token = true;
                    i = end + open_len;
                    continue;
                }
                None => {
                    current.extend(&chars[i..]);
                    tokens.push(current);
                    return (tokens, true);
                }
            }
        }
        current.push(c);
        in_token = true;
        i += 1;
    }
    if in_token {
        tokens.push(current);
    }
    (tokens, false)
}

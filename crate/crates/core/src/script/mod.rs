//! LAMMPS input-script model: tokenizer, command list, potential references
//! and the static lint pass that runs before anything is executed.

mod catalog;
mod lint;
mod parse;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use catalog::{CatalogError, CommandCatalog};
pub use lint::{static_lint, DiagCode, Diagnostic, Severity};
pub use parse::{parse_script, parse_script_with, serialize_commands};

/// One logical command line of an input script.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Command {
    /// Lowercased command keyword.
    pub name: String,
    /// Argument tokens, verbatim (quotes and `${var}` references preserved).
    pub args: Vec<String>,
    /// Original physical line(s), comments included.
    pub raw: String,
    /// 1-based line number of the first physical line.
    pub line: usize,
}

impl Command {
    /// Token-level equality, ignoring line numbers and raw text.
    pub fn same_tokens(&self, other: &Command) -> bool {
        self.name == other.name && self.args == other.args
    }

    pub fn arg(&self, idx: usize) -> Option<&str> {
        self.args.get(idx).map(String::as_str)
    }
}

/// A `pair_coeff` token naming an interatomic potential file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PotentialRef {
    pub file_name: String,
    /// Style of the most recent `pair_style` at that point, if any.
    pub pair_style: Option<String>,
    pub elements: Vec<String>,
    pub line: usize,
    /// Index into [`ScriptDocument::commands`] of the producing command.
    pub command_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimStyleHint {
    Nvt,
    Npt,
    Nve,
    Minimize,
}

/// Problems the tokenizer noticed; surfaced as lint warnings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseIssue {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptDocument {
    pub source_text: String,
    pub commands: Vec<Command>,
    pub potential_refs: Vec<PotentialRef>,
    pub declared_units: Option<String>,
    pub sim_style_hints: BTreeSet<SimStyleHint>,
    pub issues: Vec<ParseIssue>,
}

impl ScriptDocument {
    pub fn commands_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Command> + 'a {
        self.commands.iter().filter(move |c| c.name == name)
    }

    pub fn has_command(&self, name: &str) -> bool {
        self.commands.iter().any(|c| c.name == name)
    }
}

/// Maps file-name suffixes to potential style families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtensionTable {
    entries: Vec<(String, String)>,
}

impl Default for ExtensionTable {
    fn default() -> Self {
        Self::new([
            (".eam.alloy", "eam/alloy"),
            (".eam.fs", "eam/fs"),
            (".eam", "eam"),
            (".tersoff", "tersoff"),
            (".sw", "sw"),
            (".meam", "meam"),
            (".airebo", "airebo"),
            (".reax", "reax"),
        ])
    }
}

impl ExtensionTable {
    pub fn new<I, S, F>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, F)>,
        S: Into<String>,
        F: Into<String>,
    {
        let mut table = Self { entries: Vec::new() };
        for (suffix, family) in entries {
            table.insert(suffix, family);
        }
        table
    }

    /// Adds or replaces a suffix. Suffixes are matched case-insensitively.
    pub fn insert(&mut self, suffix: impl Into<String>, family: impl Into<String>) {
        let suffix = suffix.into().to_lowercase();
        let family = family.into();
        self.entries.retain(|(s, _)| *s != suffix);
        self.entries.push((suffix, family));
        // longest suffix wins
        self.entries
            .sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
    }

    /// Returns `(suffix, family)` of the longest suffix matching `name`.
    pub fn match_name(&self, name: &str) -> Option<(&str, &str)> {
        let lower = name.to_lowercase();
        self.entries
            .iter()
            .find(|(s, _)| lower.len() > s.len() && lower.ends_with(s.as_str()))
            .map(|(s, f)| (s.as_str(), f.as_str()))
    }

    pub fn family_of(&self, name: &str) -> Option<&str> {
        self.match_name(name).map(|(_, f)| f)
    }

    /// Lowercased name with the matched suffix removed.
    pub fn stem(&self, name: &str) -> String {
        let lower = name.to_lowercase();
        match self.match_name(name) {
            Some((suffix, _)) => lower[..lower.len() - suffix.len()].to_string(),
            None => lower,
        }
    }

    pub fn suffixes(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(s, _)| s.as_str())
    }
}

/// Collects potential references from `pair_coeff` commands.
pub fn extract_potential_refs(doc: &ScriptDocument, table: &ExtensionTable) -> Vec<PotentialRef> {
    let mut refs = Vec::new();
    let mut active_style: Option<String> = None;
    for (idx, cmd) in doc.commands.iter().enumerate() {
        match cmd.name.as_str() {
            "pair_style" => active_style = cmd.args.first().cloned(),
            "pair_coeff" => {
                for (pos, tok) in cmd.args.iter().enumerate() {
                    if table.match_name(tok).is_none() {
                        continue;
                    }
                    let elements = cmd.args[pos + 1..]
                        .iter()
                        .take_while(|t| t.chars().all(|c| c.is_ascii_alphabetic()))
                        .filter(|t| t.as_str() != "NULL")
                        .cloned()
                        .collect();
                    refs.push(PotentialRef {
                        file_name: tok.clone(),
                        pair_style: active_style.clone(),
                        elements,
                        line: cmd.line,
                        command_index: idx,
                    });
                }
            }
            _ => {}
        }
    }
    refs
}

//! Benchmark item files, grading, and aggregation.

mod grade;

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use grade::{grade_item, grade_open, normalize_blank, parse_model_answer, Grade, GradeFlag, MultiMode};

use crate::agent::{exec_success_at_k, score_candidate, CandidateOutcome, SessionDeps};
use crate::llm::prompts::{self, render};
use crate::llm::{ChatParams, ChatRequest, LlmClient, Message};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Single,
    Multiple,
    Fill,
    Open,
    Codegen,
}

impl ItemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ItemKind::Single => "single",
            ItemKind::Multiple => "multiple",
            ItemKind::Fill => "fill",
            ItemKind::Open => "open",
            ItemKind::Codegen => "codegen",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Knowledge,
    Syntax,
    Codegen,
}

/// One line of a bench file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchItem {
    pub id: String,
    pub kind: ItemKind,
    /// Question text, or the task description for codegen items.
    pub question: String,
    /// Option letter to option text, for choice questions.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub options: BTreeMap<String, String>,
    /// A letter (single), a list of letters (multiple), a list of blanks
    /// (fill) or rubric text (open). Absent for codegen.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Value>,
    pub difficulty: Difficulty,
    pub category: Category,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    BadItem { path: PathBuf, line: usize, message: String },
    #[error("human score file {path}: {message}")]
    HumanScores { path: PathBuf, message: String },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("repeats must be at least 1")]
    ZeroRepeats,
}

impl BenchItem {
    /// Checks that the gold payload matches the kind.
    pub fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        let gold = self.gold.as_ref();
        let ok = match self.kind {
            ItemKind::Single => gold.is_some_and(Value::is_string),
            ItemKind::Multiple | ItemKind::Fill => {
                gold.and_then(Value::as_array).is_some_and(|a| !a.is_empty() && a.iter().all(Value::is_string))
            }
            ItemKind::Open => gold.and_then(Value::as_str).is_some_and(|s| !s.trim().is_empty()),
            ItemKind::Codegen => true,
        };
        if ok {
            Ok(())
        } else {
            Err(format!("gold answer missing or malformed for a {} item", self.kind.as_str()))
        }
    }
}

/// Reads a JSON-lines item file. Blank lines are skipped; any malformed
/// line fails the load.
pub fn load_items(path: &Path) -> Result<Vec<BenchItem>, BenchError> {
    let file = std::fs::File::open(path).map_err(|source| BenchError::Io { path: path.into(), source })?;
    let mut items = Vec::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| BenchError::Io { path: path.into(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| BenchError::BadItem { path: path.into(), line: idx + 1, message };
        let item: BenchItem = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        item.validate().map_err(bad)?;
        items.push(item);
    }
    Ok(items)
}

/// Human code scores keyed by task id, from a JSON object file.
pub fn load_human_scores(path: &Path) -> Result<BTreeMap<String, f64>, BenchError> {
    let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io { path: path.into(), source })?;
    let bad = |message: String| BenchError::HumanScores { path: path.into(), message };
    let scores: BTreeMap<String, f64> = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if let Some((id, s)) = scores.iter().find(|(_, s)| !(0.0..=10.0).contains(*s)) {
        return Err(bad(format!("score {s} for {id} is outside [0, 10]")));
    }
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    pub kind: ItemKind,
    pub category: Category,
    pub difficulty: Difficulty,
    /// One score in [0, 1] per repeat.
    pub scores: Vec<f64>,
    pub mean: f64,
    pub flags: Vec<GradeFlag>,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodegenTaskRecord {
    pub id: String,
    pub k: usize,
    pub success: bool,
    pub candidates_succeeded: Vec<bool>,
    /// Best candidate score on the reward's score scale.
    pub code_score: Option<f64>,
    pub human_score: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodegenSummary {
    pub k: usize,
    pub tasks: usize,
    pub exec_success_rate: f64,
    pub mean_code_score: Option<f64>,
    pub mean_human_score: Option<f64>,
    pub records: Vec<CodegenTaskRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    /// Means on a 0-100 scale.
    pub per_category: BTreeMap<Category, f64>,
    pub per_kind: BTreeMap<ItemKind, f64>,
    pub overall: Option<f64>,
    pub repeats: usize,
    pub items: Vec<ItemRecord>,
    pub codegen: Option<CodegenSummary>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl BenchReport {
    /// Aggregates item records: arithmetic means of item means, times 100.
    pub fn from_items(items: Vec<ItemRecord>, repeats: usize) -> Self {
        let mut by_cat: BTreeMap<Category, Vec<f64>> = BTreeMap::new();
        let mut by_kind: BTreeMap<ItemKind, Vec<f64>> = BTreeMap::new();
        for it in &items {
            by_cat.entry(it.category).or_default().push(it.mean);
            by_kind.entry(it.kind).or_default().push(it.mean);
        }
        let pct = |v: &Vec<f64>| mean(v.iter().copied()).unwrap_or(0.0) * 100.0;
        Self {
            per_category: by_cat.iter().map(|(k, v)| (*k, pct(v))).collect(),
            per_kind: by_kind.iter().map(|(k, v)| (*k, pct(v))).collect(),
            overall: mean(items.iter().map(|i| i.mean)).map(|m| m * 100.0),
            repeats,
            items,
            codegen: None,
        }
    }

    /// Plain-text table of the aggregate numbers.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let mut row = |name: &str, value: String| out.push_str(&format!("{name:<24} {value:>10}\n"));
        row("group", "score".into());
        for (c, v) in &self.per_category {
            row(&format!("category:{}", serde_json::to_value(c).unwrap().as_str().unwrap_or("")), format!("{v:.2}"));
        }
        for (k, v) in &self.per_kind {
            row(&format!("kind:{}", k.as_str()), format!("{v:.2}"));
        }
        if let Some(o) = self.overall {
            row("overall", format!("{o:.2}"));
        }
        if let Some(cg) = &self.codegen {
            row(&format!("exec_success@{}", cg.k), format!("{:.4}", cg.exec_success_rate));
            if let Some(m) = cg.mean_code_score {
                row("mean_code_score", format!("{m:.2}"));
            }
            if let Some(m) = cg.mean_human_score {
                row("mean_human_score", format!("{m:.2}"));
            }
        }
        out
    }
}

pub fn qa_request(item: &BenchItem, params: &ChatParams) -> ChatRequest {
    let options: String = item.options.iter().map(|(k, v)| format!("{k}. {v}\n")).collect();
    let user = render(prompts::QA_USER, &[("kind", item.kind.as_str()), ("question", &item.question), ("options", &options)]);
    ChatRequest::new(
        "bench",
        vec![Message::system(prompts::QA_SYSTEM), Message::user(user.trim_end())],
        ChatParams { n_candidates: 1, ..params.clone() },
    )
}

#[derive(Debug, Clone)]
pub struct QaBenchConfig {
    pub repeats: usize,
    pub multi_mode: MultiMode,
    pub params: ChatParams,
    pub parallelism: usize,
}

impl Default for QaBenchConfig {
    fn default() -> Self {
        Self { repeats: 1, multi_mode: MultiMode::Jaccard, params: ChatParams::default(), parallelism: 4 }
    }
}

/// Asks `client` every non-codegen item `repeats` times and grades the
/// answers. Open items need `judge`; without one they score 0 with a flag.
/// Backend errors score 0 and are recorded on the item.
pub fn run_qa_bench(
    items: &[BenchItem],
    client: &LlmClient,
    judge: Option<&LlmClient>,
    cfg: &QaBenchConfig,
) -> Result<BenchReport, BenchError> {
    if cfg.repeats == 0 {
        return Err(BenchError::ZeroRepeats);
    }
    let qa: Vec<&BenchItem> = items.iter().filter(|i| i.kind != ItemKind::Codegen).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut records: Vec<Option<ItemRecord>> = vec![None; qa.len()];
    let slots = std::sync::Mutex::new(&mut records);
    std::thread::scope(|s| {
        for _ in 0..cfg.parallelism.max(1) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let Some(item) = qa.get(i) else { break };
                let rec = qa_item(item, client, judge, cfg);
                slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(rec);
            });
        }
    });
    Ok(BenchReport::from_items(records.into_iter().flatten().collect(), cfg.repeats))
}

fn qa_item(item: &BenchItem, client: &LlmClient, judge: Option<&LlmClient>, cfg: &QaBenchConfig) -> ItemRecord {
    let mut scores = Vec::with_capacity(cfg.repeats);
    let mut flags = Vec::new();
    let mut errors = Vec::new();
    let req = qa_request(item, &cfg.params);
    for _ in 0..cfg.repeats {
        let grade = match client.chat(&req) {
            Ok(mut r) => {
                let response = r.swap_remove(0);
                match item.kind {
                    ItemKind::Open => match judge {
                        Some(j) => grade_open(item, &response, j),
                        None => Grade::flagged(GradeFlag::NoJudge),
                    },
                    _ => grade_item(item, &response, cfg.multi_mode),
                }
            }
            Err(e) => {
                errors.push(e.to_string());
                Grade::flagged(GradeFlag::BackendError)
            }
        };
        if let Some(f) = grade.flag {
            if !flags.contains(&f) {
                flags.push(f);
            }
        }
        scores.push(grade.score);
    }
    ItemRecord {
        id: item.id.clone(),
        kind: item.kind,
        category: item.category,
        difficulty: item.difficulty,
        mean: mean(scores.iter().copied()).unwrap_or(0.0),
        scores,
        flags,
        errors,
    }
}

/// Fraction of tasks with a success among their first `k` candidates.
pub fn success_rate_at_k(outcomes: &[Vec<bool>], k: usize) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    let hits = outcomes.iter().filter(|o| o.iter().take(k).any(|&b| b)).count();
    hits as f64 / outcomes.len() as f64
}

/// Exec-Success@k and code scores over codegen items, with optional human
/// scores reported separately.
pub fn run_codegen_bench(
    tasks: &[BenchItem],
    deps: &SessionDeps,
    k: usize,
    human: &BTreeMap<String, f64>,
) -> Result<BenchReport, BenchError> {
    if k == 0 {
        return Err(BenchError::ZeroK);
    }
    let mut records = Vec::new();
    for (i, task) in tasks.iter().filter(|t| t.kind == ItemKind::Codegen).enumerate() {
        let run_id = format!("bench-{}-{i}", sanitize(&task.id));
        let rec = match exec_success_at_k(&task.question, k, deps, &run_id) {
            Ok(r) => CodegenTaskRecord {
                id: task.id.clone(),
                k,
                success: r.success,
                candidates_succeeded: r.per_candidate.iter().map(CandidateOutcome::succeeded).collect(),
                code_score: r
                    .per_candidate
                    .iter()
                    .filter_map(|c| score_candidate(&task.question, c, deps).ok())
                    .map(|b| b.score)
                    .fold(None, |best: Option<f64>, s| Some(best.map_or(s, |b| b.max(s)))),
                human_score: human.get(&task.id).copied(),
                error: None,
            },
            Err(e) => CodegenTaskRecord {
                id: task.id.clone(),
                k,
                success: false,
                candidates_succeeded: Vec::new(),
                code_score: None,
                human_score: human.get(&task.id).copied(),
                error: Some(e.to_string()),
            },
        };
        records.push(rec);
    }
    let outcomes: Vec<Vec<bool>> = records.iter().map(|r| vec![r.success]).collect();
    let human_scores: Vec<f64> = if records.is_empty() {
        human.values().copied().collect()
    } else {
        records.iter().filter_map(|r| r.human_score).collect()
    };
    let summary = CodegenSummary {
        k,
        tasks: records.len(),
        exec_success_rate: success_rate_at_k(&outcomes, 1),
        mean_code_score: mean(records.iter().filter_map(|r| r.code_score)),
        mean_human_score: mean(human_scores),
        records,
    };
    Ok(BenchReport { repeats: 1, codegen: Some(summary), ..BenchReport::default() })
}

fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

#[cfg(test)]
mod tests;

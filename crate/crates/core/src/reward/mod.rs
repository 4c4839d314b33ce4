//! Reward computation for generated scripts.
//!
//! `R_total = λ_format · R_format + λ_correct · R_correct`, where `R_format`
//! is a binary protocol check and `R_correct` is the weighted bonus-minus-penalty
//! sum over the eight quality dimensions, clipped to its attainable range
//! and rescaled to `[0, 1]`.

mod format;
mod indicators;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use format::{extract_answer_object, format_reward, FormatFailure, FormatVerdict};
pub use indicators::assemble_indicators;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RewardError {
    #[error("indicator lengths ({bonuses} bonuses, {penalties} penalties) do not match config ({k}, {m})")]
    LengthMismatch { bonuses: usize, penalties: usize, k: usize, m: usize },
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
}

/// The eight quality dimensions, in rubric order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    SyntaxCorrectness,
    LogicalConsistency,
    ParameterRationality,
    CoreLogicAccuracy,
    LogicalCompleteness,
    CodeCompleteness,
    ResultValidity,
    PhysicalSoundness,
}

impl Dimension {
    pub const ALL: [Dimension; 8] = [
        Dimension::SyntaxCorrectness,
        Dimension::LogicalConsistency,
        Dimension::ParameterRationality,
        Dimension::CoreLogicAccuracy,
        Dimension::LogicalCompleteness,
        Dimension::CodeCompleteness,
        Dimension::ResultValidity,
        Dimension::PhysicalSoundness,
    ];

    /// Dimensions scored by the LLM judge.
    pub const JUDGED: [Dimension; 5] = [
        Dimension::LogicalConsistency,
        Dimension::ParameterRationality,
        Dimension::CoreLogicAccuracy,
        Dimension::LogicalCompleteness,
        Dimension::CodeCompleteness,
    ];

    /// 1-based rubric id.
    pub fn id(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(usize::from(id).checked_sub(1)?).copied()
    }

    pub fn key(self) -> &'static str {
        match self {
            Dimension::SyntaxCorrectness => "syntax_correctness",
            Dimension::LogicalConsistency => "logical_consistency",
            Dimension::ParameterRationality => "parameter_rationality",
            Dimension::CoreLogicAccuracy => "core_logic_accuracy",
            Dimension::LogicalCompleteness => "logical_completeness",
            Dimension::CodeCompleteness => "code_completeness",
            Dimension::ResultValidity => "result_validity",
            Dimension::PhysicalSoundness => "physical_soundness",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.key() == key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgedDimension {
    pub satisfied: bool,
    pub rationale: String,
}

/// Judge verdicts for dimensions 2-6.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgedDimensions {
    pub dims: BTreeMap<Dimension, JudgedDimension>,
    pub raw_response: String,
}

impl JudgedDimensions {
    /// Fails unless exactly the judged dimensions are present.
    pub fn new(dims: BTreeMap<Dimension, JudgedDimension>, raw_response: String) -> Option<Self> {
        let keys: BTreeSet<_> = dims.keys().copied().collect();
        let want: BTreeSet<_> = Dimension::JUDGED.into_iter().collect();
        (keys == want).then_some(Self { dims, raw_response })
    }

    pub fn all_satisfied(raw_response: impl Into<String>) -> Self {
        let dims = Dimension::JUDGED
            .into_iter()
            .map(|d| (d, JudgedDimension { satisfied: true, rationale: String::new() }))
            .collect();
        Self { dims, raw_response: raw_response.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub lambda_format: f64,
    pub lambda_correct: f64,
    /// `w⁺`, one per bonus indicator (dimensions 1-8 by default).
    pub bonus_weights: Vec<f64>,
    /// `w⁻`, one per penalty indicator (one deduction slot per dimension).
    pub penalty_weights: Vec<f64>,
    pub required_answer_fields: BTreeSet<String>,
    /// Multiplier from `r_correct` to the reported score.
    pub score_scale: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lambda_format: 1.0,
            lambda_correct: 5.0,
            bonus_weights: vec![2.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0],
            penalty_weights: vec![1.0; 8],
            required_answer_fields: BTreeSet::from(["lammps_code".to_string()]),
            score_scale: 10.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        let bad = |m: &str| Err(RewardError::InvalidConfig(m.to_string()));
        if self.bonus_weights.is_empty() {
            return bad("at least one bonus weight is required");
        }
        let positive = |w: &f64| w.is_finite() && *w > 0.0;
        if !self.bonus_weights.iter().all(positive) || !self.penalty_weights.iter().all(positive) {
            return bad("weights must be finite and positive");
        }
        if !(self.lambda_format.is_finite() && self.lambda_format >= 0.0)
            || !(self.lambda_correct.is_finite() && self.lambda_correct >= 0.0)
        {
            return bad("lambdas must be finite and non-negative");
        }
        if !(self.score_scale.is_finite() && self.score_scale > 0.0) {
            return bad("score_scale must be positive");
        }
        Ok(())
    }

    /// Largest attainable raw score, `Σw⁺`.
    pub fn r_max(&self) -> f64 {
        self.bonus_weights.iter().sum()
    }

    /// Smallest attainable raw score, `-Σw⁻`.
    pub fn r_min(&self) -> f64 {
        -self.penalty_weights.iter().sum::<f64>()
    }

    pub fn max_total(&self) -> f64 {
        self.lambda_format + self.lambda_correct
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Indicators {
    pub bonuses: Vec<bool>,
    pub penalties: Vec<bool>,
    pub bonus_evidence: Vec<String>,
    pub penalty_evidence: Vec<String>,
}

impl Indicators {
    pub fn new(bonuses: Vec<bool>, penalties: Vec<bool>) -> Self {
        let bonus_evidence = vec![String::new(); bonuses.len()];
        let penalty_evidence = vec![String::new(); penalties.len()];
        Self { bonuses, penalties, bonus_evidence, penalty_evidence }
    }
}

/// `R_raw = Σ w⁺_k B_k − Σ w⁻_m P_m`.
pub fn correctness_raw(ind: &Indicators, cfg: &RewardConfig) -> Result<f64, RewardError> {
    if ind.bonuses.len() != cfg.bonus_weights.len() || ind.penalties.len() != cfg.penalty_weights.len() {
        return Err(RewardError::LengthMismatch {
            bonuses: ind.bonuses.len(),
            penalties: ind.penalties.len(),
            k: cfg.bonus_weights.len(),
            m: cfg.penalty_weights.len(),
        });
    }
    let bonus: f64 = ind.bonuses.iter().zip(&cfg.bonus_weights).filter(|(b, _)| **b).map(|(_, w)| w).sum();
    let penalty: f64 = ind.penalties.iter().zip(&cfg.penalty_weights).filter(|(p, _)| **p).map(|(_, w)| w).sum();
    Ok(bonus - penalty)
}

/// Clips `r_raw` to `[R_min, R_max]` and maps it linearly onto `[0, 1]`.
pub fn clip_rescale(r_raw: f64, cfg: &RewardConfig) -> f64 {
    let (lo, hi) = (cfg.r_min(), cfg.r_max());
    (r_raw.clamp(lo, hi) - lo) / (hi - lo)
}

pub fn total_reward(r_format: u8, r_correct: f64, cfg: &RewardConfig) -> f64 {
    cfg.lambda_format * f64::from(r_format) + cfg.lambda_correct * r_correct
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_format: u8,
    pub r_raw: f64,
    pub r_correct: f64,
    pub r_total: f64,
    /// `r_correct` on the configured score scale.
    pub score: f64,
    pub config_snapshot: RewardConfig,
}

impl RewardBreakdown {
    pub fn compute(r_format: u8, ind: &Indicators, cfg: &RewardConfig) -> Result<Self, RewardError> {
        let r_raw = correctness_raw(ind, cfg)?;
        let r_correct = clip_rescale(r_raw, cfg);
        Ok(Self {
            r_format,
            r_raw,
            r_correct,
            r_total: total_reward(r_format, r_correct, cfg),
            score: r_correct * cfg.score_scale,
            config_snapshot: cfg.clone(),
        })
    }
}

use std::collections::BTreeSet;

use mdforge_core::reward::{format_reward, Indicators, RewardBreakdown, RewardConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::common::read_fixture;
use crate::Outcome;

/// Straight-line reference: weighted sum, clip, rescale, blend.
fn reference(b: &[bool], p: &[bool], wp: &[f64], wm: &[f64], lf: f64, lc: f64, f: u8) -> (f64, f64, f64) {
    let mut raw = 0.0;
    let mut hi = 0.0;
    let mut lo = 0.0;
    for i in 0..wp.len() {
        hi += wp[i];
        if b[i] {
            raw += wp[i];
        }
    }
    for j in 0..wm.len() {
        lo -= wm[j];
        if p[j] {
            raw -= wm[j];
        }
    }
    let clipped = if raw > hi { hi } else if raw < lo { lo } else { raw };
    let rc = (clipped - lo) / (hi - lo);
    (raw, rc, lf * f as f64 + lc * rc)
}

fn random_config(rng: &mut ChaCha8Rng, max_total: usize) -> RewardConfig {
    let k = rng.random_range(1..max_total);
    let m = rng.random_range(0..=(max_total - k));
    RewardConfig {
        lambda_format: rng.random_range(0.0..10.0),
        lambda_correct: rng.random_range(0.0..10.0),
        bonus_weights: (0..k).map(|_| rng.random_range(0.05..5.0)).collect(),
        penalty_weights: (0..m).map(|_| rng.random_range(0.05..5.0)).collect(),
        ..RewardConfig::default()
    }
}

fn bits(pattern: u32, offset: usize, n: usize) -> Vec<bool> {
    (0..n).map(|i| pattern >> (offset + i) & 1 == 1).collect()
}

pub fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut configs: Vec<RewardConfig> = (0..200).map(|_| random_config(&mut rng, 12)).collect();
    configs.push(RewardConfig::default());
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    for cfg in &configs {
        let (k, m) = (cfg.bonus_weights.len(), cfg.penalty_weights.len());
        for pattern in 0u32..(1 << (k + m)) {
            let (b, p) = (bits(pattern, 0, k), bits(pattern, k, m));
            let ind = Indicators::new(b.clone(), p.clone());
            for f in [0u8, 1] {
                let got = RewardBreakdown::compute(f, &ind, cfg).unwrap();
                let (raw, rc, total) =
                    reference(&b, &p, &cfg.bonus_weights, &cfg.penalty_weights, cfg.lambda_format, cfg.lambda_correct, f);
                let err = (got.r_raw - raw).abs().max((got.r_correct - rc).abs()).max((got.r_total - total).abs());
                worst = worst.max(err);
                if err > 1e-12 {
                    return Outcome::Fail(format!("pattern {pattern:b} f={f}: engine {got:?} vs reference ({raw}, {rc}, {total})"));
                }
                // the blend itself is exact
                if got.r_total != cfg.lambda_format * f64::from(f) + cfg.lambda_correct * got.r_correct {
                    return Outcome::Fail(format!("total blend not exact for pattern {pattern:b}"));
                }
                checked += 1;
            }
        }
    }
    Outcome::Pass(format!("{} weight configs, {checked} evaluations, max deviation {worst:.1e}", configs.len()))
}

pub fn bounds_and_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xb0b);
    let mut violations = Vec::new();
    let (mut bonus_flips, mut penalty_flips) = (0, 0);
    for case in 0..10_000 {
        let cfg = random_config(&mut rng, 16);
        let b: Vec<bool> = (0..cfg.bonus_weights.len()).map(|_| rng.random()).collect();
        let p: Vec<bool> = (0..cfg.penalty_weights.len()).map(|_| rng.random()).collect();
        let score = |b: &[bool], p: &[bool]| RewardBreakdown::compute(1, &Indicators::new(b.to_vec(), p.to_vec()), &cfg).unwrap();
        let base = score(&b, &p);
        if !(0.0..=1.0).contains(&base.r_correct) {
            violations.push(format!("case {case}: r_correct {}", base.r_correct));
        }
        let interior = |r: &RewardBreakdown| r.r_raw > cfg.r_min() && r.r_raw < cfg.r_max();
        if let Some(i) = (0..b.len()).find(|&i| !b[i]) {
            let mut b2 = b.clone();
            b2[i] = true;
            let up = score(&b2, &p);
            if (interior(&base) || interior(&up)) && up.r_correct <= base.r_correct {
                violations.push(format!("case {case}: bonus {i} flip did not increase"));
            }
            bonus_flips += 1;
        }
        if let Some(j) = (0..p.len()).find(|&j| !p[j]) {
            let mut p2 = p.clone();
            p2[j] = true;
            let down = score(&b, &p2);
            if (interior(&base) || interior(&down)) && down.r_correct >= base.r_correct {
                violations.push(format!("case {case}: penalty {j} flip did not decrease"));
            }
            penalty_flips += 1;
        }
    }
    if violations.is_empty() {
        Outcome::Pass(format!("10000 cases, {bonus_flips} bonus flips, {penalty_flips} penalty flips, 0 violations"))
    } else {
        Outcome::Fail(format!("{} violations, first: {}", violations.len(), violations[0]))
    }
}

#[derive(Deserialize)]
struct FormatCase {
    name: String,
    text: String,
    required: Vec<String>,
    value: u8,
    failure: Option<String>,
}

pub fn format_table() -> Outcome {
    let cases: Vec<FormatCase> = serde_json::from_str(&read_fixture("format_cases.json")).unwrap();
    let mut wrong = Vec::new();
    for c in &cases {
        let required: BTreeSet<String> = c.required.iter().cloned().collect();
        let v = format_reward(&c.text, &required);
        let failure = v.failure.map(|f| f.to_string());
        if v.value != c.value || failure != c.failure {
            wrong.push(format!("{}: got ({}, {failure:?}), labeled ({}, {:?})", c.name, v.value, c.value, c.failure));
        }
    }
    if cases.len() == 24 && wrong.is_empty() {
        Outcome::Pass("24/24 verdicts agree".into())
    } else {
        Outcome::Fail(format!("{} cases, {} disagree: {}", cases.len(), wrong.len(), wrong.join("; ")))
    }
}

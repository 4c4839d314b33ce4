use mdforge_core::bench::{grade_item, success_rate_at_k, BenchItem, GradeFlag, MultiMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::common::read_fixture;
use crate::Outcome;

#[derive(Deserialize)]
struct GradingCase {
    name: String,
    item: BenchItem,
    response: String,
    multi_mode: MultiMode,
    /// numerator, denominator
    expected: (u32, u32),
    flag: Option<GradeFlag>,
}

pub fn math() -> Outcome {
    let mut wrong = Vec::new();
    let cases: Vec<GradingCase> =
        read_fixture("bench/grading_cases.jsonl").lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    for c in &cases {
        let g = grade_item(&c.item, &c.response, c.multi_mode);
        let want = f64::from(c.expected.0) / f64::from(c.expected.1);
        if g.score != want || g.flag != c.flag {
            wrong.push(format!("{}: got {} {:?}, want {want} {:?}", c.name, g.score, g.flag, c.flag));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0xa7c);
    let mut non_monotone = 0;
    for _ in 0..1000 {
        let tasks = rng.random_range(1..40);
        let width = rng.random_range(1..8);
        let p: f64 = rng.random();
        let matrix: Vec<Vec<bool>> = (0..tasks).map(|_| (0..width).map(|_| rng.random_bool(p)).collect()).collect();
        let rates: Vec<f64> = (1..=width + 1).map(|k| success_rate_at_k(&matrix, k)).collect();
        if rates.windows(2).any(|w| w[1] < w[0]) || rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            non_monotone += 1;
        }
    }

    if wrong.is_empty() && non_monotone == 0 {
        Outcome::Pass(format!("{}/{} grading cases exact; 1000 outcome matrices monotone in k", cases.len(), cases.len()))
    } else {
        Outcome::Fail(format!("{} grading mismatches ({}); {non_monotone} non-monotone matrices", wrong.len(), wrong.join("; ")))
    }
}

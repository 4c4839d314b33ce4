use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{base_name, guess_elements, stem_keep_case, Recommendation, Registry};

/// Blend of name similarity and element overlap. Weights are normalized by
/// their sum, so the score stays in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityWeights {
    pub name: f64,
    pub elements: f64,
}

impl Default for SimilarityWeights {
    fn default() -> Self {
        Self { name: 0.7, elements: 0.3 }
    }
}

/// Padded character trigrams (two leading blanks, one trailing).
pub fn trigrams(s: &str) -> BTreeSet<String> {
    let padded: Vec<char> = "  ".chars().chain(s.chars()).chain(" ".chars()).collect();
    padded.windows(3).map(|w| w.iter().collect()).collect()
}

pub fn trigram_jaccard(a: &str, b: &str) -> f64 {
    jaccard(&trigrams(a), &trigrams(b))
}

fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Top-`k` registry records most similar to `query`. An exact file-name
/// match scores 1.0 and always ranks first; the rest are ordered by score
/// descending, then file name ascending.
pub fn find_similar(query: &str, registry: &Registry, k: usize, weights: &SimilarityWeights) -> Vec<Recommendation> {
    if k == 0 {
        return Vec::new();
    }
    let table = registry.table();
    let query_base = base_name(query);
    let query_norm = table.stem(query_base);
    let query_elems: BTreeSet<String> = guess_elements(&stem_keep_case(query_base, table)).into_iter().collect();
    let total = weights.name + weights.elements;
    let (wn, we) = if total > 0.0 { (weights.name / total, weights.elements / total) } else { (1.0, 0.0) };

    let mut scored: Vec<(bool, f64, &super::PotentialRecord)> = registry
        .records()
        .iter()
        .map(|rec| {
            if rec.file_name == query_base {
                return (true, 1.0, rec);
            }
            let name = trigram_jaccard(&query_norm, &table.stem(&rec.file_name));
            let rec_elems: BTreeSet<String> = rec.elements.iter().cloned().collect();
            let elems = jaccard(&query_elems, &rec_elems);
            (false, (wn * name + we * elems).clamp(0.0, 1.0), rec)
        })
        .collect();

    scored.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then(b.1.total_cmp(&a.1))
            .then_with(|| a.2.file_name.cmp(&b.2.file_name))
    });
    scored
        .into_iter()
        .take(k)
        .map(|(_, score, rec)| Recommendation { record: rec.clone(), score })
        .collect()
}

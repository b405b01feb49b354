//! Agreement metrics between the two coders.
//!
//! * pairwise code similarity: cosine of embeddings, clamped to `[0, 1]`;
//! * Cohen's kappa over normalized code texts treated as categories;
//! * agreement rate: share of pairs whose similarity is strictly above the
//!   threshold (0.8 by default);
//! * ranking of units by similarity, highest first, ties by unit index.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::Embedder;
use crate::model::{normalize_code, UnitId};

pub const DEFAULT_AGREEMENT_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MetricsError {
    #[error("text is empty")]
    EmptyText,
    #[error("input is empty")]
    EmptyInput,
    #[error("label sequences differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("embedding dimensions differ ({left} vs {right})")]
    DimensionMismatch { left: usize, right: usize },
    #[error("embedding contains a non-finite value")]
    NonFinite,
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("{uncoded} unit(s) lack a code from one of the coders")]
    GateNotPassed { uncoded: usize },
}

/// Cohen's kappa, or `Undefined` when chance agreement is 1 (both coders
/// used one and the same category throughout).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kappa {
    Value(f64),
    Undefined,
}

impl Kappa {
    pub fn value(self) -> Option<f64> {
        match self {
            Kappa::Value(v) => Some(v),
            Kappa::Undefined => None,
        }
    }
}

pub fn cohens_kappa<T: Eq + Hash>(labels_a: &[T], labels_b: &[T]) -> Result<Kappa, MetricsError> {
    if labels_a.len() != labels_b.len() {
        return Err(MetricsError::LengthMismatch {
            left: labels_a.len(),
            right: labels_b.len(),
        });
    }
    if labels_a.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut categories: HashMap<&T, usize> = HashMap::new();
    let mut marginals: Vec<(u64, u64)> = Vec::new();
    let mut observed: u64 = 0;
    for (a, b) in labels_a.iter().zip(labels_b) {
        for (label, is_a) in [(a, true), (b, false)] {
            let next = categories.len();
            let k = *categories.entry(label).or_insert(next);
            if k == marginals.len() {
                marginals.push((0, 0));
            }
            if is_a {
                marginals[k].0 += 1;
            } else {
                marginals[k].1 += 1;
            }
        }
        if a == b {
            observed += 1;
        }
    }
    // kappa = (p_o - p_e) / (1 - p_e), scaled by n^2 so that the
    // numerator and denominator are exact integers.
    let n = labels_a.len() as i128;
    let chance: i128 = marginals
        .iter()
        .map(|&(ca, cb)| i128::from(ca) * i128::from(cb))
        .sum();
    let denominator = n * n - chance;
    if denominator == 0 {
        return Ok(Kappa::Undefined);
    }
    let numerator = i128::from(observed) * n - chance;
    Ok(Kappa::Value(numerator as f64 / denominator as f64))
}

/// `|{score > threshold}| / N`.
pub fn agreement_rate(scores: &[f64], threshold: f64) -> Result<f64, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let above = scores.iter().filter(|&&s| s > threshold).count();
    Ok(above as f64 / scores.len() as f64)
}

/// Positions of `scores` ordered by score descending; equal scores keep
/// ascending position order.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    order
}

pub fn pair_similarity(embedder: &dyn Embedder, code_a: &str, code_b: &str) -> Result<f64, MetricsError> {
    if code_a.trim().is_empty() || code_b.trim().is_empty() {
        return Err(MetricsError::EmptyText);
    }
    let a = embedder.embed(code_a)?;
    let b = embedder.embed(code_b)?;
    Ok(a.cosine(&b)?.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSimilarity {
    pub unit_id: UnitId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// One entry per unit, in unit order.
    pub pair_scores: Vec<PairSimilarity>,
    pub ranking: Vec<UnitId>,
    /// `None` when kappa is undefined.
    pub kappa: Option<f64>,
    pub agreement_rate: f64,
    pub threshold: f64,
    pub computed_at_version: u64,
}

impl MetricsReport {
    pub fn score_of(&self, unit: &UnitId) -> Option<f64> {
        self.pair_scores
            .iter()
            .find(|p| &p.unit_id == unit)
            .map(|p| p.score)
    }
}

/// Both coders' codes for one unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodePair {
    pub unit_id: UnitId,
    pub code_a: String,
    pub code_b: String,
}

pub fn compute_report(
    pairs: &[CodePair],
    version: u64,
    embedder: &dyn Embedder,
    threshold: f64,
) -> Result<MetricsReport, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let uncoded = pairs
        .iter()
        .filter(|p| p.code_a.trim().is_empty() || p.code_b.trim().is_empty())
        .count();
    if uncoded > 0 {
        return Err(MetricsError::GateNotPassed { uncoded });
    }
    let scores = pairs
        .iter()
        .map(|p| pair_similarity(embedder, &p.code_a, &p.code_b))
        .collect::<Result<Vec<_>, _>>()?;
    let labels_a: Vec<String> = pairs.iter().map(|p| normalize_code(&p.code_a)).collect();
    let labels_b: Vec<String> = pairs.iter().map(|p| normalize_code(&p.code_b)).collect();
    let kappa = cohens_kappa(&labels_a, &labels_b)?.value();
    Ok(MetricsReport {
        ranking: rank_descending(&scores)
            .into_iter()
            .map(|i| pairs[i].unit_id.clone())
            .collect(),
        pair_scores: pairs
            .iter()
            .zip(&scores)
            .map(|(p, &score)| PairSimilarity {
                unit_id: p.unit_id.clone(),
                score,
            })
            .collect(),
        kappa,
        agreement_rate: agreement_rate(&scores, threshold)?,
        threshold,
        computed_at_version: version,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::TermFrequencyEmbedder;

    #[test]
    fn kappa_hand_case() {
        let k = cohens_kappa(&["A", "A", "B", "B"], &["A", "B", "B", "B"]).unwrap();
        assert_eq!(k, Kappa::Value(0.5));
    }

    #[test]
    fn kappa_perfect_and_degenerate() {
        assert_eq!(
            cohens_kappa(&["A", "B", "A"], &["A", "B", "A"]).unwrap(),
            Kappa::Value(1.0)
        );
        assert_eq!(cohens_kappa(&["A", "A", "A"], &["A", "A", "A"]).unwrap(), Kappa::Undefined);
    }

    #[test]
    fn kappa_errors() {
        assert_eq!(
            cohens_kappa(&["A"], &["A", "B"]),
            Err(MetricsError::LengthMismatch { left: 1, right: 2 })
        );
        assert_eq!(cohens_kappa::<&str>(&[], &[]), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn kappa_total_disagreement_is_negative() {
        let k = cohens_kappa(&["A", "B"], &["B", "A"]).unwrap();
        assert_eq!(k, Kappa::Value(-1.0));
    }

    #[test]
    fn agreement_rate_example() {
        assert_eq!(agreement_rate(&[0.876, 0.3, 0.81], 0.8).unwrap(), 2.0 / 3.0);
        // strictly above
        assert_eq!(agreement_rate(&[0.8, 0.8], 0.8).unwrap(), 0.0);
        assert_eq!(agreement_rate(&[], 0.8), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn ranking_breaks_ties_by_index() {
        assert_eq!(rank_descending(&[0.5, 0.9, 0.5, 1.0]), vec![3, 1, 0, 2]);
    }

    #[test]
    fn similarity_examples_under_fallback() {
        let e = TermFrequencyEmbedder;
        let same = pair_similarity(&e, "same text", "same text").unwrap();
        assert!((same - 1.0).abs() <= 1e-6);
        assert_eq!(pair_similarity(&e, "alpha beta", "gamma delta").unwrap(), 0.0);
        assert_eq!(pair_similarity(&e, "", "x"), Err(MetricsError::EmptyText));
    }

    #[test]
    fn related_codes_beat_unrelated() {
        let e = TermFrequencyEmbedder;
        let related = pair_similarity(
            &e,
            "Excellent guide for new college students",
            "Excellent read for aspiring business students",
        )
        .unwrap();
        let unrelated = pair_similarity(
            &e,
            "Excellent guide for new college students",
            "Politicians deceive voters",
        )
        .unwrap();
        // 3 shared words out of 6 on each side.
        assert!((related - 0.5).abs() < 1e-12);
        assert!(related > unrelated);
    }

    #[test]
    fn report_requires_both_codes() {
        let pairs = vec![CodePair {
            unit_id: UnitId::for_index(0),
            code_a: "x".into(),
            code_b: " ".into(),
        }];
        assert_eq!(
            compute_report(&pairs, 1, &TermFrequencyEmbedder, 0.8),
            Err(MetricsError::GateNotPassed { uncoded: 1 })
        );
    }

    #[test]
    fn report_on_identical_codes() {
        let pairs: Vec<CodePair> = (0..15)
            .map(|i| CodePair {
                unit_id: UnitId::for_index(i),
                code_a: format!("code {}", i % 4),
                code_b: format!("Code  {}", i % 4),
            })
            .collect();
        let r = compute_report(&pairs, 7, &TermFrequencyEmbedder, 0.8).unwrap();
        assert_eq!(r.kappa, Some(1.0));
        assert_eq!(r.agreement_rate, 1.0);
        assert_eq!(r.computed_at_version, 7);
        assert_eq!(r.ranking.len(), 15);
    }
}

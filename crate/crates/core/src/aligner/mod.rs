//! Multi-instance content selection: property-set/sentence similarity,
//! max-margin training, threshold calibration, alignment extraction and
//! alignment-quality metrics.

mod metrics;
mod model;

pub use metrics::{alignment_fscore, link_prf, rank_at_k, Prf};
pub use model::{joint_vocabulary, tune_coefficient, Aligner, AlignerConfig, EpochReport, ScoredDocument};

use crate::autodiff::{argmax, AutodiffError, Graph, NodeId};
use crate::corpus::{AlignmentSet, Link};

/// Score of one property set against one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityResult {
    pub score: f64,
    /// `(best property index, p_i · w_t)` for every word.
    pub per_word_best: Vec<(usize, f64)>,
}

/// `S = Σ_t max_i p_i · w_t` over plain vectors. Ties go to the lowest
/// property index.
pub fn pair_similarity<P: AsRef<[f64]>, W: AsRef<[f64]>>(
    properties: &[P],
    words: &[W],
) -> Result<SimilarityResult, AutodiffError> {
    if properties.is_empty() {
        return Err(AutodiffError::Empty("pair_similarity"));
    }
    let mut per_word_best = Vec::with_capacity(words.len());
    for w in words {
        let w = w.as_ref();
        let dots: Vec<f64> = properties
            .iter()
            .map(|p| {
                let p = p.as_ref();
                if p.len() != w.len() {
                    return Err(AutodiffError::Shape(format!(
                        "pair_similarity: property of length {} against word of length {}",
                        p.len(),
                        w.len()
                    )));
                }
                Ok(p.iter().zip(w).map(|(a, b)| a * b).sum())
            })
            .collect::<Result<_, _>>()?;
        per_word_best.push(argmax(&dots));
    }
    let score = per_word_best.iter().map(|&(_, v)| v).sum();
    Ok(SimilarityResult { score, per_word_best })
}

/// Differentiable `S` from property vectors already transposed into a
/// `[h, n]` matrix and bridged word vectors.
pub fn similarity_node(g: &mut Graph, properties_t: NodeId, words: &[NodeId]) -> Result<NodeId, AutodiffError> {
    let w = g.stack(words)?;
    let m = g.matmul(w, properties_t)?;
    let best = g.row_max(m)?;
    g.sum(best)
}

/// `max(0, margin + wrong - matched)`.
pub fn hinge(margin: f64, matched: f64, wrong: f64) -> f64 {
    (margin + wrong - matched).max(0.0)
}

/// Scores of a matched pair and its two negatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginTriple {
    pub matched: f64,
    /// `S(P, s')` for a sentence of another entity.
    pub wrong_sentence: f64,
    /// `S(P', s)` for the property set of another entity.
    pub wrong_properties: f64,
}

/// Batch mean of the two hinge terms per matched pair.
pub fn margin_loss(batch: &[MarginTriple], margin: f64) -> Result<f64, AutodiffError> {
    if batch.is_empty() {
        return Err(AutodiffError::Empty("margin_loss"));
    }
    let total: f64 = batch
        .iter()
        .map(|t| hinge(margin, t.matched, t.wrong_sentence) + hinge(margin, t.matched, t.wrong_properties))
        .sum();
    Ok(total / batch.len() as f64)
}

/// Differentiable hinge pair for one matched score and its negatives.
pub fn margin_node(
    g: &mut Graph,
    matched: NodeId,
    wrong_sentence: NodeId,
    wrong_properties: NodeId,
    margin: f64,
) -> Result<NodeId, AutodiffError> {
    let a = g.sub(wrong_sentence, matched)?;
    let a = g.offset(a, margin)?;
    let a = g.relu(a)?;
    let b = g.sub(wrong_properties, matched)?;
    let b = g.offset(b, margin)?;
    let b = g.relu(b)?;
    g.add(a, b)
}

/// `mean + a * std` (population std) over word-level best similarities.
pub fn calibrate_threshold(scores: &[f64], a: f64) -> Result<f64, AutodiffError> {
    if scores.is_empty() {
        return Err(AutodiffError::Empty("calibrate_threshold"));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    Ok(mean + a * var.sqrt())
}

/// Links each word of sentence `sentence` to its best property when the
/// similarity exceeds `threshold`. Words whose best property is
/// `excluded` (the empty relation) stay unaligned.
pub fn extract_alignments(
    sentence: usize,
    result: &SimilarityResult,
    threshold: f64,
    excluded: Option<usize>,
    into: &mut AlignmentSet,
) -> Result<(), crate::corpus::CorpusError> {
    for (w, &(p, v)) in result.per_word_best.iter().enumerate() {
        if v > threshold && Some(p) != excluded {
            into.insert(Link::new(sentence, w, p))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hand_dot_products() {
        let r = pair_similarity(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        assert_eq!(r.per_word_best, vec![(0, 1.0), (0, 0.5)]);
        assert_eq!(r.score, 1.5);
    }

    #[test]
    fn zero_words_score_zero() {
        let r = pair_similarity(&[vec![3.0, -1.0]], &vec![vec![0.0, 0.0]; 4]).unwrap();
        assert_eq!(r.score, 0.0);
        assert!(pair_similarity::<Vec<f64>, _>(&[], &[vec![1.0]]).is_err());
    }

    #[test]
    fn margin_cases() {
        let t = |m, s, p| MarginTriple {
            matched: m,
            wrong_sentence: s,
            wrong_properties: p,
        };
        assert_eq!(margin_loss(&[t(2.0, 0.5, 0.2)], 1.0).unwrap(), 0.0);
        assert_eq!(margin_loss(&[t(0.7, 0.7, 0.7)], 1.0).unwrap(), 2.0);
        assert_eq!(margin_loss(&[t(0.0, 0.5, 0.5)], 1.0).unwrap(), 3.0);
    }

    #[test]
    fn threshold_by_hand() {
        let th = calibrate_threshold(&[0.1, 0.2, 0.3], 0.75).unwrap();
        assert_abs_diff_eq!(th, 0.2 + 0.75 * (0.02f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(th, 0.2612, epsilon = 1e-4);
        assert!(calibrate_threshold(&[], 0.75).is_err());
    }

    #[test]
    fn extraction_limits() {
        let r = SimilarityResult {
            score: 0.0,
            per_word_best: vec![(0, 0.3), (1, -2.0), (2, 5.0)],
        };
        let mut none = AlignmentSet::new();
        extract_alignments(0, &r, f64::INFINITY, None, &mut none).unwrap();
        assert!(none.is_empty());
        let mut all = AlignmentSet::new();
        extract_alignments(0, &r, f64::NEG_INFINITY, None, &mut all).unwrap();
        assert_eq!(all.len(), 3);
        let mut sink = AlignmentSet::new();
        extract_alignments(0, &r, f64::NEG_INFINITY, Some(2), &mut sink).unwrap();
        assert_eq!(sink.len(), 2);
    }
}

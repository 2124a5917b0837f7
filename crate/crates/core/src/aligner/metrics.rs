use serde::{Deserialize, Serialize};

use crate::corpus::AlignmentSet;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

/// Link-level precision, recall and F1 for one example. An empty gold set
/// scores 1 when the prediction is empty too and 0 otherwise; an empty
/// prediction against nonempty gold scores 0.
pub fn link_prf(predicted: &AlignmentSet, gold: &AlignmentSet) -> Prf {
    match (predicted.is_empty(), gold.is_empty()) {
        (true, true) => {
            return Prf {
                precision: 1.0,
                recall: 1.0,
                f: 1.0,
            }
        }
        (_, true) | (true, _) => return Prf::default(),
        _ => {}
    }
    let hits = predicted.links().filter(|l| gold.contains(l)).count() as f64;
    let precision = hits / predicted.len() as f64;
    let recall = hits / gold.len() as f64;
    let f = if hits == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf { precision, recall, f }
}

/// Macro average of per-example scores over `(predicted, gold)` pairs.
pub fn alignment_fscore<'a>(pairs: impl IntoIterator<Item = (&'a AlignmentSet, &'a AlignmentSet)>) -> Prf {
    let mut sum = Prf::default();
    let mut n = 0usize;
    for (p, g) in pairs {
        let s = link_prf(p, g);
        sum.precision += s.precision;
        sum.recall += s.recall;
        sum.f += s.f;
        n += 1;
    }
    if n == 0 {
        return Prf::default();
    }
    let n = n as f64;
    Prf {
        precision: sum.precision / n,
        recall: sum.recall / n,
        f: sum.f / n,
    }
}

/// 1-based rank of `true_score` among `distractors` under descending score;
/// ties count against the true item.
pub fn rank_at_k(true_score: f64, distractors: &[f64]) -> usize {
    1 + distractors.iter().filter(|&&d| d >= true_score).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Link;

    fn set(links: &[(usize, usize, usize)]) -> AlignmentSet {
        AlignmentSet::from_links(links.iter().map(|&(s, w, p)| Link::new(s, w, p))).unwrap()
    }

    #[test]
    fn identical_sets() {
        let a = set(&[(0, 1, 1), (1, 0, 2)]);
        assert_eq!(link_prf(&a, &a).f, 1.0);
    }

    #[test]
    fn half_recall() {
        let s = link_prf(&set(&[(0, 1, 1)]), &set(&[(0, 1, 1), (0, 2, 2)]));
        assert_eq!(s.precision, 1.0);
        assert_eq!(s.recall, 0.5);
        assert!((s.f - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_conventions() {
        let e = AlignmentSet::new();
        assert_eq!(link_prf(&e, &e).f, 1.0);
        assert_eq!(link_prf(&set(&[(0, 0, 0)]), &e).f, 0.0);
        assert_eq!(link_prf(&e, &set(&[(0, 0, 0)])).f, 0.0);
    }

    #[test]
    fn ranks() {
        assert_eq!(rank_at_k(5.0, &[1.0; 14]), 1);
        assert_eq!(rank_at_k(0.0, &[1.0; 14]), 15);
        assert_eq!(rank_at_k(1.0, &[1.0, 0.0]), 2);
    }
}

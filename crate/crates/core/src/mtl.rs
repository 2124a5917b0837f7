//! Multi-task training: the generator also predicts, for each target word,
//! whether the aligner linked it to some property.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, AutodiffError, Graph, NodeId, Optimizer};
use crate::corpus::{AlignmentSet, CorpusError, Document};
use crate::error::{Error, Result};
use crate::generator::{EpochReport, Generator};

/// `λ` per epoch: each stage applies from its `from_epoch` (1-based) until
/// the next stage begins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaStage {
    pub from_epoch: usize,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MtlConfig {
    pub schedule: Vec<LambdaStage>,
}

impl Default for MtlConfig {
    fn default() -> Self {
        MtlConfig {
            schedule: vec![
                LambdaStage {
                    from_epoch: 1,
                    lambda: 0.1,
                },
                LambdaStage {
                    from_epoch: 5,
                    lambda: 0.9,
                },
            ],
        }
    }
}

impl MtlConfig {
    pub fn constant(lambda: f64) -> Self {
        MtlConfig {
            schedule: vec![LambdaStage { from_epoch: 1, lambda }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.schedule.first().map(|s| s.from_epoch);
        if first != Some(1) {
            return Err(Error::Config("lambda schedule must start at epoch 1".into()));
        }
        for w in self.schedule.windows(2) {
            if w[1].from_epoch <= w[0].from_epoch {
                return Err(Error::Config("lambda schedule epochs must increase".into()));
            }
        }
        for s in &self.schedule {
            check_lambda(s.lambda)?;
        }
        Ok(())
    }

    pub fn lambda(&self, epoch: usize) -> f64 {
        self.schedule
            .iter()
            .take_while(|s| s.from_epoch <= epoch)
            .last()
            .map_or(1.0, |s| s.lambda)
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    Ok(())
}

/// One label per target token of `document` (sentences concatenated, then
/// EOS): true when the word takes part in some link.
pub fn derive_labels(document: &Document, alignments: &AlignmentSet) -> Result<Vec<bool>, CorpusError> {
    let n = document.num_tokens();
    let mut labels = vec![false; n + 1];
    for l in alignments.links() {
        let i = document.flat_index(l.sentence, l.word).ok_or_else(|| {
            CorpusError::Invalid(format!("link at sentence {} word {} is outside the document", l.sentence, l.word))
        })?;
        labels[i] = true;
    }
    Ok(labels)
}

/// `σ(v_a · tanh(W_c [c ; h]))` given the combined hidden vector.
pub fn alignment_probability(head: &[f64], hidden: &[f64]) -> f64 {
    sigmoid(head.iter().zip(hidden).map(|(a, b)| a * b).sum())
}

/// `-log σ(z)` for a positive label, `-log σ(-z)` otherwise.
pub fn alignment_bce(g: &mut Graph, logit: NodeId, label: bool) -> Result<NodeId, AutodiffError> {
    let z = if label { logit } else { g.scale(logit, -1.0)? };
    let ls = g.log_sigmoid(z)?;
    g.scale(ls, -1.0)
}

/// `λ L_wNLL + (1 - λ) L_aln`.
pub fn mtl_loss(nll: f64, alignment: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(lambda * nll + (1.0 - lambda) * alignment)
}

pub fn mtl_loss_node(g: &mut Graph, nll: NodeId, alignment: NodeId, lambda: f64) -> Result<NodeId> {
    check_lambda(lambda)?;
    let a = g.scale(nll, lambda)?;
    let b = g.scale(alignment, 1.0 - lambda)?;
    Ok(g.add(a, b)?)
}

/// Multi-task training for `generator.config.epochs` epochs with the `λ`
/// of each epoch taken from `config`. Returns the reports and the final
/// optimizer state.
pub fn train_mtl(
    generator: &mut Generator,
    corpus: &[crate::corpus::Example],
    labels: &[Vec<bool>],
    config: &MtlConfig,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<(Vec<EpochReport>, Optimizer)> {
    config.validate()?;
    let mut optimizer = generator.optimizer();
    let mut rng = ChaCha8Rng::seed_from_u64(generator.config.seed.wrapping_add(1));
    let mut reports = Vec::new();
    for epoch in 1..=generator.config.epochs {
        let lambda = config.lambda(epoch);
        let r = generator.train_epoch(corpus, Some(labels), lambda, &mut optimizer, &mut rng, epoch)?;
        log::info!(
            "mtl epoch {epoch}: lambda {lambda}, nll/token {:.4}, alignment/token {:.4}",
            r.nll_per_token,
            r.alignment_per_token.unwrap_or(0.0)
        );
        on_epoch(&r);
        reports.push(r);
    }
    Ok((reports, optimizer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamStore;
    use crate::corpus::Link;
    use approx::assert_abs_diff_eq;

    fn doc(words: &[&str]) -> Document {
        Document::new(vec![words.iter().map(|w| w.to_string()).collect()])
    }

    #[test]
    fn labels_from_links() {
        let d = doc(&["married", "to", "frances", "from", "1914"]);
        let a = AlignmentSet::from_links((0..3).map(|w| Link::new(0, w, 0))).unwrap();
        assert_eq!(derive_labels(&d, &a).unwrap(), vec![true, true, true, false, false, false]);
        assert!(derive_labels(&d, &AlignmentSet::new()).unwrap().iter().all(|&l| !l));
        let bad = AlignmentSet::from_links([Link::new(0, 9, 0)]).unwrap();
        assert!(derive_labels(&d, &bad).is_err());
    }

    #[test]
    fn head_arithmetic() {
        assert_eq!(alignment_probability(&[0.0, 0.0], &[0.4, -2.0]), 0.5);
        assert_abs_diff_eq!(alignment_probability(&[3f64.ln()], &[1.0]), 0.75, epsilon = 1e-12);
    }

    #[test]
    fn combination() {
        assert_abs_diff_eq!(mtl_loss(2.0, 1.0, 0.9).unwrap(), 1.9, epsilon = 1e-12);
        assert_eq!(mtl_loss(2.5, 7.0, 1.0).unwrap(), 2.5);
        assert!(mtl_loss(1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn default_schedule() {
        let s = MtlConfig::default();
        let ls: Vec<f64> = (1..=6).map(|e| s.lambda(e)).collect();
        assert_eq!(ls, vec![0.1, 0.1, 0.1, 0.1, 0.9, 0.9]);
        assert!(MtlConfig::constant(1.2).validate().is_err());
    }

    #[test]
    fn bce_matches_closed_form() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let z = g.constant(0.3).unwrap();
        let pos = alignment_bce(&mut g, z, true).unwrap();
        let neg = alignment_bce(&mut g, z, false).unwrap();
        assert_abs_diff_eq!(g.scalar(pos).unwrap(), -sigmoid(0.3).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(g.scalar(neg).unwrap(), -(1.0 - sigmoid(0.3)).ln(), epsilon = 1e-12);
    }
}

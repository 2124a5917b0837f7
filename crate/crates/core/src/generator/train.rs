use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{target_ids, Generator};
use crate::autodiff::{Graph, NodeId, Optimizer, Tensor};
use crate::corpus::vocab::EOS_ID;
use crate::corpus::Example;
use crate::error::{Error, Result};
use crate::mtl::{alignment_bce, mtl_loss_node};

/// Consecutive ranges of at most `block` positions covering `0..len`.
pub fn split_blocks(len: usize, block: usize) -> Vec<Range<usize>> {
    assert!(block > 0, "block size must be positive");
    (0..len).step_by(block).map(|s| s..(s + block).min(len)).collect()
}

/// Summed losses of one document.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockLoss {
    pub nll: f64,
    /// Binary cross-entropy of the alignment head; zero without labels.
    pub alignment: f64,
    pub tokens: usize,
    pub blocks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub nll_per_token: f64,
    pub alignment_per_token: Option<f64>,
    pub lambda: Option<f64>,
    pub tokens: usize,
    pub blocks: usize,
}

impl Generator {
    /// Teacher-forced steps over `targets` from state `(h, c)` after feeding
    /// `prev`. Returns per-token losses and the final state.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn forced_steps(
        &self,
        g: &mut Graph,
        enc: &super::Encoded,
        mut h: NodeId,
        mut c: NodeId,
        mut prev: usize,
        targets: &[usize],
        labels: Option<&[bool]>,
    ) -> Result<(Vec<NodeId>, Vec<NodeId>, NodeId, NodeId)> {
        let mut nll = Vec::with_capacity(targets.len());
        let mut aln = Vec::new();
        for (k, &y) in targets.iter().enumerate() {
            let s = self.step(g, enc, prev, h, c)?;
            nll.push(g.cross_entropy(s.logits, y)?);
            if let Some(labels) = labels {
                let z = self.alignment_logit(g, &s)?;
                aln.push(alignment_bce(g, z, labels[k])?);
            }
            (h, c, prev) = (s.h, s.c, y);
        }
        Ok((nll, aln, h, c))
    }

    /// Block-wise training on one document. Each block is a separate
    /// forward/backward pass and optimizer step; the decoder state crosses
    /// block boundaries by value only. With `labels`, the loss is the
    /// multi-task mix weighted by `lambda`.
    pub fn train_document(
        &mut self,
        ex: &Example,
        labels: Option<&[bool]>,
        lambda: f64,
        optimizer: &mut Optimizer,
        rng: &mut ChaCha8Rng,
    ) -> Result<BlockLoss> {
        let targets = target_ids(ex, &self.output_vocab);
        if let Some(l) = labels {
            if l.len() != targets.len() {
                return Err(Error::Config(format!(
                    "{}: {} alignment labels for {} target tokens",
                    ex.entity_id(),
                    l.len(),
                    targets.len()
                )));
            }
        }
        let mut total = BlockLoss::default();
        let mut carried: Option<(Vec<f64>, Vec<f64>)> = None;
        let mut prev = EOS_ID;
        for range in split_blocks(targets.len(), self.config.block_size) {
            let seed = rng.gen();
            let grads = {
                let mut g = Graph::training(&self.params, self.config.dropout, seed);
                let enc = self.encode(&mut g, &ex.properties)?;
                let (h, c) = match &carried {
                    None => self.initial_nodes(&mut g, &enc)?,
                    Some((h, c)) => (g.input(Tensor::vector(h.clone()))?, g.input(Tensor::vector(c.clone()))?),
                };
                let block_labels = labels.map(|l| &l[range.clone()]);
                let (nll, aln, h, c) = self.forced_steps(&mut g, &enc, h, c, prev, &targets[range.clone()], block_labels)?;
                let nll = g.sum_over(&nll)?;
                total.nll += g.scalar(nll)?;
                let loss = if aln.is_empty() {
                    nll
                } else {
                    let aln = g.sum_over(&aln)?;
                    total.alignment += g.scalar(aln)?;
                    mtl_loss_node(&mut g, nll, aln, lambda)?
                };
                carried = Some((g.value(h).data().to_vec(), g.value(c).data().to_vec()));
                g.backward(loss)?
            };
            self.params.accumulate(&grads)?;
            optimizer.step(&mut self.params)?;
            prev = targets[range.end - 1];
            total.tokens += range.len();
            total.blocks += 1;
        }
        Ok(total)
    }

    /// One pass over `corpus` in shuffled order.
    pub fn train_epoch(
        &mut self,
        corpus: &[Example],
        labels: Option<&[Vec<bool>]>,
        lambda: f64,
        optimizer: &mut Optimizer,
        rng: &mut ChaCha8Rng,
        epoch: usize,
    ) -> Result<EpochReport> {
        if let Some(l) = labels {
            if l.len() != corpus.len() {
                return Err(Error::Config(format!("{} label rows for {} examples", l.len(), corpus.len())));
            }
        }
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(rng);
        let mut sum = BlockLoss::default();
        for i in order {
            let r = self.train_document(&corpus[i], labels.map(|l| l[i].as_slice()), lambda, optimizer, rng)?;
            sum.nll += r.nll;
            sum.alignment += r.alignment;
            sum.tokens += r.tokens;
            sum.blocks += r.blocks;
        }
        let per = |x: f64| if sum.tokens > 0 { x / sum.tokens as f64 } else { 0.0 };
        Ok(EpochReport {
            epoch,
            nll_per_token: per(sum.nll),
            alignment_per_token: labels.map(|_| per(sum.alignment)),
            lambda: labels.map(|_| lambda),
            tokens: sum.tokens,
            blocks: sum.blocks,
        })
    }

    pub fn optimizer(&self) -> Optimizer {
        Optimizer::adam(self.config.learning_rate, &self.params).with_clip(self.config.clip_norm)
    }

    /// Likelihood training for `config.epochs` epochs with Adam. Returns
    /// the per-epoch reports and the final optimizer state.
    pub fn train(
        &mut self,
        corpus: &[Example],
        mut on_epoch: impl FnMut(&EpochReport),
    ) -> Result<(Vec<EpochReport>, Optimizer)> {
        let mut optimizer = self.optimizer();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed.wrapping_add(1));
        let mut reports = Vec::new();
        for epoch in 1..=self.config.epochs {
            let r = self.train_epoch(corpus, None, 1.0, &mut optimizer, &mut rng, epoch)?;
            log::info!("generator epoch {epoch}: nll/token {:.4}", r.nll_per_token);
            on_epoch(&r);
            reports.push(r);
        }
        Ok((reports, optimizer))
    }

    /// Sum of per-block losses with state carried by value, evaluated
    /// without dropout. Equal to [`Generator::nll`] for any block size.
    pub fn blocked_nll(&self, ex: &Example) -> Result<f64> {
        let targets = target_ids(ex, &self.output_vocab);
        let mut carried: Option<(Vec<f64>, Vec<f64>)> = None;
        let mut prev = EOS_ID;
        let mut total = 0.0;
        for range in split_blocks(targets.len(), self.config.block_size) {
            let mut g = Graph::new(&self.params);
            let enc = self.encode(&mut g, &ex.properties)?;
            let (h, c) = match &carried {
                None => self.initial_nodes(&mut g, &enc)?,
                Some((h, c)) => (g.input(Tensor::vector(h.clone()))?, g.input(Tensor::vector(c.clone()))?),
            };
            let (nll, _, h, c) = self.forced_steps(&mut g, &enc, h, c, prev, &targets[range.clone()], None)?;
            let s = g.sum_over(&nll)?;
            total += g.scalar(s)?;
            carried = Some((g.value(h).data().to_vec(), g.value(c).data().to_vec()));
            prev = targets[range.end - 1];
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_split_by_hand() {
        let lens: Vec<usize> = split_blocks(100, 40).iter().map(|r| r.len()).collect();
        assert_eq!(lens, vec![40, 40, 20]);
        assert_eq!(split_blocks(7, 40), vec![0..7]);
        assert!(split_blocks(0, 3).is_empty());
    }
}

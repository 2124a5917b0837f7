//! REINFORCE fine-tuning with an alignment-precision reward.
//!
//! Each training block is split into a teacher-forced prefix, still trained
//! by likelihood, and a suffix sampled from the policy. The suffix grows
//! with a curriculum until the agent predicts whole blocks.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax, AutodiffError, Graph, NodeId, Optimizer, Tensor};
use crate::corpus::delex::{NUMERIC, YEAR};
use crate::corpus::vocab::EOS_ID;
use crate::corpus::Example;
use crate::error::{Error, Result};
use crate::generator::{sample_index, split_blocks, target_ids, DecodeState, Encoded, Generator};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    /// Reward scale `γ`.
    pub gamma: f64,
    /// Penalty per emitted YEAR or NUMERIC token.
    pub kappa: f64,
    /// Agent tokens added per curriculum stage.
    pub increment: usize,
    pub epochs_per_increment: usize,
    pub block_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub baseline_learning_rate: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            gamma: 1.0,
            kappa: 0.025,
            increment: 3,
            epochs_per_increment: 2,
            block_size: 50,
            epochs: 35,
            learning_rate: 0.001,
            baseline_learning_rate: 0.001,
            clip_norm: Some(5.0),
            seed: 1,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma <= 0.0 || self.kappa < 0.0 {
            return Err(Error::Config("rl needs gamma > 0 and kappa >= 0".into()));
        }
        if self.increment == 0 || self.epochs_per_increment == 0 || self.block_size == 0 {
            return Err(Error::Config("rl increment, epochs_per_increment and block_size must be positive".into()));
        }
        Ok(())
    }
}

/// Agent-predicted tokens per block at `epoch` (1-based):
/// `min(block_size, increment * ceil(epoch / epochs_per_increment))`.
pub fn curriculum_schedule(epoch: usize, config: &RlConfig) -> usize {
    let stage = epoch.max(1).div_ceil(config.epochs_per_increment);
    (config.increment * stage).min(config.block_size)
}

/// First epoch at which the agent covers the whole block.
pub fn full_coverage_epoch(config: &RlConfig) -> usize {
    config.block_size.div_ceil(config.increment) * config.epochs_per_increment - (config.epochs_per_increment - 1)
}

/// `γ · |{t : ŷ_t ∈ aligned}| / |ŷ| - κ · #(YEAR, NUMERIC)`; zero for an
/// empty block.
pub fn reward<S: AsRef<str>>(tokens: &[S], aligned: &BTreeSet<String>, config: &RlConfig) -> f64 {
    if tokens.is_empty() {
        return 0.0;
    }
    let hits = tokens.iter().filter(|t| aligned.contains(t.as_ref())).count();
    let placeholders = tokens.iter().filter(|t| matches!(t.as_ref(), YEAR | NUMERIC)).count();
    config.gamma * hits as f64 / tokens.len() as f64 - config.kappa * placeholders as f64
}

/// Linear predictor of the block reward from a detached decoder state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineRegressor {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl BaselineRegressor {
    pub fn new(dim: usize) -> Self {
        BaselineRegressor {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn predict(&self, h: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(h).map(|(w, x)| w * x).sum::<f64>()
    }

    /// One SGD step on `(prediction - target)² / 2`.
    pub fn update(&mut self, h: &[f64], target: f64, lr: f64) {
        let err = self.predict(h) - target;
        for (w, x) in self.weights.iter_mut().zip(h) {
            *w -= lr * err * x;
        }
        self.bias -= lr * err;
    }
}

/// `advantage · -log π(action)`; its gradient is the REINFORCE term
/// `-(r - b) ∇ log π(action)` for a loss to be minimised.
pub fn policy_gradient_node(g: &mut Graph, logits: NodeId, action: usize, advantage: f64) -> Result<NodeId, AutodiffError> {
    let ce = g.cross_entropy(logits, action)?;
    g.scale(ce, advantage)
}

/// Record of one mixed block.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledBlock {
    pub prefix: Vec<usize>,
    pub suffix: Vec<usize>,
    pub log_probs: Vec<f64>,
    /// Decoder state that produced each sampled token.
    pub states: Vec<Vec<f64>>,
}

struct MixedBlock {
    nll: Vec<NodeId>,
    /// `(cross-entropy node, action, h_t)`
    sampled: Vec<(NodeId, usize, Vec<f64>)>,
    /// State after the gold block, for the next block.
    end: (NodeId, NodeId),
}

#[allow(clippy::too_many_arguments)]
fn mixed_block<R: Rng + ?Sized>(
    generator: &Generator,
    g: &mut Graph,
    enc: &Encoded,
    h: NodeId,
    c: NodeId,
    prev: usize,
    targets: &[usize],
    agent: usize,
    rng: &mut R,
) -> Result<MixedBlock> {
    let split = targets.len() - agent.min(targets.len());
    let (nll, _, h, c) = generator.forced_steps(g, enc, h, c, prev, &targets[..split], None)?;
    let mut sampled = Vec::new();
    let (mut sh, mut sc) = (h, c);
    let mut last = if split == 0 { prev } else { targets[split - 1] };
    for _ in split..targets.len() {
        let s = generator.step(g, enc, last, sh, sc)?;
        let action = sample_index(&softmax(g.value(s.logits).data()), rng)?;
        let ce = g.cross_entropy(s.logits, action)?;
        sampled.push((ce, action, g.value(s.h).data().to_vec()));
        if action == EOS_ID {
            break;
        }
        (sh, sc, last) = (s.h, s.c, action);
    }
    let gold_prev = if split == 0 { prev } else { targets[split - 1] };
    let (_, _, eh, ec) = generator.forced_steps(g, enc, h, c, gold_prev, &targets[split..], None)?;
    Ok(MixedBlock {
        nll,
        sampled,
        end: (eh, ec),
    })
}

/// Teacher-forces the first `targets.len() - agent` tokens from `state`
/// and samples the remaining `agent` from the policy, stopping early at
/// EOS.
pub fn sample_block<R: Rng + ?Sized>(
    generator: &Generator,
    props: &crate::corpus::PropertySet,
    state: &DecodeState,
    targets: &[usize],
    agent: usize,
    max_block: usize,
    rng: &mut R,
) -> Result<SampledBlock> {
    if agent > max_block {
        return Err(Error::Config(format!("{agent} agent tokens exceed the block size {max_block}")));
    }
    let mut g = Graph::new(&generator.params);
    let enc = generator.encode(&mut g, props)?;
    let h = g.input_vector(state.h.clone())?;
    let c = g.input_vector(state.c.clone())?;
    let m = mixed_block(generator, &mut g, &enc, h, c, state.last_token, targets, agent, rng)?;
    let split = targets.len() - agent.min(targets.len());
    let mut block = SampledBlock {
        prefix: targets[..split].to_vec(),
        suffix: Vec::new(),
        log_probs: Vec::new(),
        states: Vec::new(),
    };
    for (ce, action, h) in m.sampled {
        block.suffix.push(action);
        block.log_probs.push(-g.scalar(ce)?);
        block.states.push(h);
    }
    Ok(block)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RlEpochReport {
    pub epoch: usize,
    pub agent_tokens: usize,
    pub mean_reward: f64,
    pub nll_per_prefix_token: f64,
    pub blocks: usize,
}

/// REINFORCE fine-tuning with SGD. `aligned[i]` holds the aligned word
/// types of `corpus[i]` in output-vocabulary form.
pub fn train_rl(
    generator: &mut Generator,
    corpus: &[Example],
    aligned: &[BTreeSet<String>],
    config: &RlConfig,
    mut on_epoch: impl FnMut(&RlEpochReport),
) -> Result<(Vec<RlEpochReport>, BaselineRegressor)> {
    config.validate()?;
    if aligned.len() != corpus.len() {
        return Err(Error::Config(format!("{} aligned-word sets for {} examples", aligned.len(), corpus.len())));
    }
    let mut optimizer = Optimizer::sgd(config.learning_rate, &generator.params).with_clip(config.clip_norm);
    let mut baseline = BaselineRegressor::new(generator.hidden_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut reports = Vec::new();
    for epoch in 1..=config.epochs {
        let agent = curriculum_schedule(epoch, config);
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut rng);
        let (mut reward_sum, mut nll_sum, mut prefix_tokens, mut blocks) = (0.0, 0.0, 0usize, 0usize);
        for i in order {
            let ex = &corpus[i];
            let targets = target_ids(ex, &generator.output_vocab);
            let mut carried: Option<(Vec<f64>, Vec<f64>)> = None;
            let mut prev = EOS_ID;
            for range in split_blocks(targets.len(), config.block_size) {
                let seed = rng.gen();
                let block = &targets[range.clone()];
                let (grads, r, states) = {
                    let mut g = Graph::training(&generator.params, generator.config.dropout, seed);
                    let enc = generator.encode(&mut g, &ex.properties)?;
                    let (h, c) = match &carried {
                        None => generator.initial_nodes(&mut g, &enc)?,
                        Some((h, c)) => (g.input(Tensor::vector(h.clone()))?, g.input(Tensor::vector(c.clone()))?),
                    };
                    let m = mixed_block(generator, &mut g, &enc, h, c, prev, block, agent, &mut rng)?;
                    let tokens: Vec<&str> = m.sampled.iter().map(|&(_, a, _)| generator.output_vocab.token(a)).collect();
                    let r = reward(&tokens, &aligned[i], config);
                    let mut terms = m.nll.clone();
                    if !m.nll.is_empty() {
                        let s = g.sum_over(&m.nll)?;
                        nll_sum += g.scalar(s)?;
                    }
                    for (ce, _, h) in &m.sampled {
                        let advantage = r - baseline.predict(h);
                        terms.push(g.scale(*ce, advantage)?);
                    }
                    let loss = g.sum_over(&terms)?;
                    carried = Some((g.value(m.end.0).data().to_vec(), g.value(m.end.1).data().to_vec()));
                    let states: Vec<Vec<f64>> = m.sampled.into_iter().map(|(_, _, h)| h).collect();
                    (g.backward(loss)?, r, states)
                };
                generator.params.accumulate(&grads)?;
                optimizer.step(&mut generator.params)?;
                for h in &states {
                    baseline.update(h, r, config.baseline_learning_rate);
                }
                prefix_tokens += block.len() - agent.min(block.len());
                reward_sum += r;
                blocks += 1;
                prev = block[block.len() - 1];
            }
        }
        let report = RlEpochReport {
            epoch,
            agent_tokens: agent,
            mean_reward: if blocks > 0 { reward_sum / blocks as f64 } else { 0.0 },
            nll_per_prefix_token: if prefix_tokens > 0 { nll_sum / prefix_tokens as f64 } else { 0.0 },
            blocks,
        };
        log::info!(
            "rl epoch {epoch}: agent tokens {agent}, mean reward {:.4}, nll/prefix token {:.4}",
            report.mean_reward,
            report.nll_per_prefix_token
        );
        on_epoch(&report);
        reports.push(report);
    }
    Ok((reports, baseline))
}

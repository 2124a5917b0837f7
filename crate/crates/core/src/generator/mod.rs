//! Attention encoder-decoder over property sets.
//!
//! The property-set encoder is the bidirectional LSTM of [`crate::encoders`].
//! The decoder is a single LSTM whose state starts at the mean of the
//! property encodings; each step attends over the encodings with dot-product
//! scores and predicts the next word from `W_o tanh(W_c [c ; h])`.

mod train;

pub use train::{split_blocks, BlockLoss, EpochReport};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{argmax, softmax, AutodiffError, Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::corpus::vocab::EOS_ID;
use crate::corpus::{Example, PropertySet, Vocabulary};
use crate::encoders::{find_param, init_embedding, lstm_cell, property_ids, BiLstm, LstmCell};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeStrategy {
    #[default]
    Greedy,
    Sample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Tokens per training block.
    pub block_size: usize,
    pub max_decode_len: usize,
    pub decode: DecodeStrategy,
    /// Forbids emitting any n-gram of this order twice while decoding;
    /// 0 disables the constraint.
    pub no_repeat_ngram: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            embed_dim: 100,
            hidden_dim: 100,
            block_size: 40,
            max_decode_len: 200,
            decode: DecodeStrategy::Greedy,
            no_repeat_ngram: 0,
            dropout: 0.3,
            epochs: 20,
            learning_rate: 0.001,
            clip_norm: Some(5.0),
            seed: 1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 || self.max_decode_len == 0 {
            return Err(Error::Config("block_size and max_decode_len must be at least 1".into()));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("generator dimensions must be nonzero".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Decoder state between steps, as plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub last_token: usize,
    /// Tokens emitted since the current block began.
    pub block_tokens: usize,
}

/// Parameter handles of the decoder side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderParams {
    pub cell: LstmCell,
    pub embedding: ParamId,
    /// `[d, 2d]`, applied to `[c ; h]`.
    pub combine: ParamId,
    /// `[|V|, d]`.
    pub output: ParamId,
    /// Alignment-prediction head, `[d]`. Unused by likelihood training.
    pub alignment_head: ParamId,
}

/// Encoded property set inside a graph.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    /// `[n, d]`
    pub rows: NodeId,
    /// `[d, n]`
    pub cols: NodeId,
    pub mean: NodeId,
}

/// Graph nodes produced by one decoder step.
#[derive(Clone, Copy, Debug)]
pub struct Step {
    pub h: NodeId,
    pub c: NodeId,
    /// `tanh(W_c [c_t ; h_t])`
    pub hidden: NodeId,
    pub logits: NodeId,
    pub attention: NodeId,
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub params: ParamStore,
    pub input_vocab: Vocabulary,
    pub output_vocab: Vocabulary,
    pub config: GeneratorConfig,
    pub encoder: BiLstm,
    pub decoder: DecoderParams,
}

/// Attention over plain vectors: `(c, α)` with `α = softmax(h · p_i)`.
pub fn attend(h: &[f64], properties: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>), AutodiffError> {
    if properties.is_empty() {
        return Err(AutodiffError::Empty("attend"));
    }
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let rows = g.input(Tensor::from_rows(properties)?)?;
    let cols = g.transpose(rows)?;
    let h = g.input_vector(h.to_vec())?;
    let (c, a) = attend_node(&mut g, rows, cols, h)?;
    Ok((g.value(c).data().to_vec(), g.value(a).data().to_vec()))
}

/// Attention inside a graph; `rows` is `[n, d]` and `cols` its transpose.
pub fn attend_node(g: &mut Graph, rows: NodeId, cols: NodeId, h: NodeId) -> Result<(NodeId, NodeId), AutodiffError> {
    let scores = g.matmul(rows, h)?;
    let alpha = g.softmax(scores)?;
    let c = g.matmul(cols, alpha)?;
    Ok((c, alpha))
}

/// Target ids of a whole document: every sentence concatenated, then EOS.
pub fn target_ids(ex: &Example, vocab: &Vocabulary) -> Vec<usize> {
    let mut ids: Vec<usize> = ex.document.sentences.iter().flatten().map(|t| vocab.id(t)).collect();
    ids.push(EOS_ID);
    ids
}

impl Generator {
    pub fn new(input_vocab: Vocabulary, output_vocab: Vocabulary, config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let (e, d) = (config.embed_dim, config.hidden_dim);
        let input_embedding = params.add("gen.input_embedding", init_embedding(&input_vocab, e, &mut rng))?;
        let encoder = BiLstm::new(&mut params, "gen.encoder", input_embedding, d, &mut rng)?;
        let embedding = params.add("gen.output_embedding", init_embedding(&output_vocab, e, &mut rng))?;
        let cell = LstmCell::new(&mut params, "gen.decoder", e, d, &mut rng)?;
        let combine = params.add(
            "gen.w_c",
            Tensor::uniform(&[d, 2 * d], 1.0 / (2.0 * d as f64).sqrt(), &mut rng),
        )?;
        let scale = 1.0 / (d as f64).sqrt();
        let output = params.add("gen.w_o", Tensor::uniform(&[output_vocab.len(), d], scale, &mut rng))?;
        // created last so the other initial values do not depend on it
        let alignment_head = params.add("gen.v_a", Tensor::uniform(&[d], scale, &mut rng))?;
        Ok(Generator {
            params,
            input_vocab,
            output_vocab,
            config,
            encoder,
            decoder: DecoderParams {
                cell,
                embedding,
                combine,
                output,
                alignment_head,
            },
        })
    }

    /// Reassembles a model from restored parameters.
    pub fn from_parts(
        params: ParamStore,
        input_vocab: Vocabulary,
        output_vocab: Vocabulary,
        config: GeneratorConfig,
    ) -> Result<Self> {
        let encoder = BiLstm::find(&params, "gen.encoder", "gen.input_embedding")?;
        let decoder = DecoderParams {
            cell: LstmCell::find(&params, "gen.decoder")?,
            embedding: find_param(&params, "gen.output_embedding")?,
            combine: find_param(&params, "gen.w_c")?,
            output: find_param(&params, "gen.w_o")?,
            alignment_head: find_param(&params, "gen.v_a")?,
        };
        if params.value(decoder.output).shape()[0] != output_vocab.len() {
            return Err(Error::Checkpoint("output projection does not match the output vocabulary".into()));
        }
        Ok(Generator {
            params,
            input_vocab,
            output_vocab,
            config,
            encoder,
            decoder,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    pub fn encode(&self, g: &mut Graph, props: &PropertySet) -> Result<Encoded> {
        let ids: Vec<Vec<usize>> = props.pairs.iter().map(|pv| property_ids(pv, &self.input_vocab)).collect();
        let ps = self.encoder.encode_property_set(g, &ids)?;
        let rows = g.stack(&ps)?;
        let cols = g.transpose(rows)?;
        let mean = g.mean_over(&ps)?;
        Ok(Encoded { rows, cols, mean })
    }

    /// Property encodings as plain vectors.
    pub fn encode_values(&self, props: &PropertySet) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new(&self.params);
        let enc = self.encode(&mut g, props)?;
        let t = g.value(enc.rows);
        Ok((0..t.shape()[0]).map(|r| t.row(r).to_vec()).collect())
    }

    /// Feeds `token` and predicts the next one.
    pub fn step(&self, g: &mut Graph, enc: &Encoded, token: usize, h: NodeId, c: NodeId) -> Result<Step> {
        let dec = &self.decoder;
        let table = g.param(dec.embedding);
        let x = g.embedding(table, token)?;
        let x = g.dropout(x)?;
        let (h, c) = lstm_cell(g, &dec.cell, x, h, c)?;
        let hd = g.dropout(h)?;
        let (ctx, attention) = attend_node(g, enc.rows, enc.cols, hd)?;
        let ch = g.concat(&[ctx, hd])?;
        let wc = g.param(dec.combine);
        let z = g.matmul(wc, ch)?;
        let hidden = g.tanh(z)?;
        let wo = g.param(dec.output);
        let logits = g.matmul(wo, hidden)?;
        Ok(Step {
            h,
            c,
            hidden,
            logits,
            attention,
        })
    }

    /// `v_a · tanh(W_c [c ; h])`, the pre-sigmoid alignment score.
    pub fn alignment_logit(&self, g: &mut Graph, step: &Step) -> Result<NodeId> {
        let va = g.param(self.decoder.alignment_head);
        Ok(g.dot(va, step.hidden)?)
    }

    /// Initial state: `h_0` the mean property encoding, zero cell.
    pub fn initial_nodes(&self, g: &mut Graph, enc: &Encoded) -> Result<(NodeId, NodeId)> {
        let c = g.input(Tensor::zeros(&[self.hidden_dim()]))?;
        Ok((enc.mean, c))
    }

    pub fn init_decoder(&self, props: &PropertySet) -> Result<DecodeState> {
        let mut g = Graph::new(&self.params);
        let enc = self.encode(&mut g, props)?;
        Ok(DecodeState {
            h: g.value(enc.mean).data().to_vec(),
            c: vec![0.0; self.hidden_dim()],
            last_token: EOS_ID,
            block_tokens: 0,
        })
    }

    /// One step from plain values: the next-token distribution and the
    /// advanced state (whose `last_token` is still the fed token).
    pub fn decode_step(&self, props: &PropertySet, token: usize, state: &DecodeState) -> Result<(Vec<f64>, DecodeState)> {
        if token >= self.output_vocab.len() {
            return Err(Error::Config(format!("token id {token} outside the output vocabulary")));
        }
        let mut g = Graph::new(&self.params);
        let enc = self.encode(&mut g, props)?;
        let h = g.input_vector(state.h.clone())?;
        let c = g.input_vector(state.c.clone())?;
        let s = self.step(&mut g, &enc, token, h, c)?;
        let dist = softmax(g.value(s.logits).data());
        Ok((
            dist,
            DecodeState {
                h: g.value(s.h).data().to_vec(),
                c: g.value(s.c).data().to_vec(),
                last_token: token,
                block_tokens: state.block_tokens + 1,
            },
        ))
    }

    /// Teacher-forced `-Σ log P(y_t | y_<t, X)` over the whole target,
    /// without blocks or dropout.
    pub fn nll(&self, props: &PropertySet, targets: &[usize]) -> Result<f64> {
        if targets.is_empty() {
            return Err(Error::Config("nll over an empty target".into()));
        }
        let mut g = Graph::new(&self.params);
        let loss = self.nll_node(&mut g, props, targets)?;
        Ok(g.scalar(loss)?)
    }

    /// Differentiable unblocked likelihood loss.
    pub fn nll_node(&self, g: &mut Graph, props: &PropertySet, targets: &[usize]) -> Result<NodeId> {
        let enc = self.encode(g, props)?;
        let (mut h, mut c) = self.initial_nodes(g, &enc)?;
        let mut prev = EOS_ID;
        let mut terms = Vec::with_capacity(targets.len());
        for &y in targets {
            let s = self.step(g, &enc, prev, h, c)?;
            terms.push(g.cross_entropy(s.logits, y)?);
            (h, c, prev) = (s.h, s.c, y);
        }
        Ok(g.sum_over(&terms)?)
    }

    /// Decodes from `props` until EOS or `max_decode_len` tokens. EOS is not
    /// included in the output.
    pub fn generate<R: Rng + ?Sized>(&self, props: &PropertySet, strategy: DecodeStrategy, rng: &mut R) -> Result<Vec<usize>> {
        let mut g = Graph::new(&self.params);
        let enc = self.encode(&mut g, props)?;
        let (mut h, mut c) = self.initial_nodes(&mut g, &enc)?;
        let mut prev = EOS_ID;
        let mut out = Vec::new();
        for _ in 0..self.config.max_decode_len {
            let s = self.step(&mut g, &enc, prev, h, c)?;
            let mut logits = g.value(s.logits).data().to_vec();
            for t in banned_tokens(&out, self.config.no_repeat_ngram) {
                logits[t] = f64::NEG_INFINITY;
            }
            let next = match strategy {
                DecodeStrategy::Greedy => argmax(&logits).0,
                DecodeStrategy::Sample => sample_index(&softmax(&logits), rng)?,
            };
            if next == EOS_ID {
                break;
            }
            out.push(next);
            (h, c, prev) = (s.h, s.c, next);
        }
        Ok(out)
    }

    /// [`Generator::generate`] mapped to output tokens.
    pub fn generate_tokens<R: Rng + ?Sized>(&self, props: &PropertySet, strategy: DecodeStrategy, rng: &mut R) -> Result<Vec<String>> {
        Ok(self
            .generate(props, strategy, rng)?
            .into_iter()
            .map(|i| self.output_vocab.token(i).to_string())
            .collect())
    }
}

/// Tokens that would complete an n-gram already present in `prefix`.
pub fn banned_tokens(prefix: &[usize], n: usize) -> Vec<usize> {
    if n == 0 || prefix.len() < n {
        return Vec::new();
    }
    let tail = &prefix[prefix.len() + 1 - n..];
    prefix
        .windows(n)
        .filter(|w| w[..n - 1] == *tail)
        .map(|w| w[n - 1])
        .collect()
}

pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<usize> {
    let dist = WeightedIndex::new(probs).map_err(|e| Error::Config(format!("cannot sample: {e}")))?;
    Ok(dist.sample(rng))
}

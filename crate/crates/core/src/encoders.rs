//! Bidirectional LSTM encoders for property-value pairs and sentences.
//!
//! A property-value pair is read as its property tokens, then value tokens,
//! then class tokens; its encoding is the sum of the forward and backward
//! final states. A sentence is encoded position by position as the
//! concatenation `[forward_t ; backward_t]`.

use std::collections::HashSet;
use std::path::Path;

use rand::Rng;

use crate::autodiff::{AutodiffError, Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::corpus::{PropertyValue, Vocabulary};
use crate::error::{Error, Result};

/// Scale of the uniform initialisation for embeddings not covered by a
/// pretrained file.
pub const EMBED_INIT: f64 = 0.05;

/// One LSTM direction. The stacked gate matrix maps `[x ; h]` to the
/// pre-activations of the input, forget, output and candidate gates, in that
/// order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmCell {
    pub weights: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let scale = 1.0 / (hidden_dim as f64).sqrt();
        let weights = store.add(
            &format!("{prefix}.w"),
            Tensor::uniform(&[4 * hidden_dim, input_dim + hidden_dim], scale, rng),
        )?;
        let mut b = vec![0.0; 4 * hidden_dim];
        b[hidden_dim..2 * hidden_dim].fill(1.0);
        let bias = store.add(&format!("{prefix}.b"), Tensor::vector(b))?;
        Ok(LstmCell {
            weights,
            bias,
            input_dim,
            hidden_dim,
        })
    }

    /// Looks the cell up by name in a restored store.
    pub fn find(store: &ParamStore, prefix: &str) -> Result<Self> {
        let weights = find_param(store, &format!("{prefix}.w"))?;
        let bias = find_param(store, &format!("{prefix}.b"))?;
        let shape = store.value(weights).shape();
        if shape.len() != 2 || !shape[0].is_multiple_of(4) || shape[1] < shape[0] / 4 {
            return Err(Error::Checkpoint(format!("{prefix}.w has shape {shape:?}")));
        }
        let hidden_dim = shape[0] / 4;
        Ok(LstmCell {
            weights,
            bias,
            input_dim: shape[1] - hidden_dim,
            hidden_dim,
        })
    }
}

pub(crate) fn find_param(store: &ParamStore, name: &str) -> Result<ParamId> {
    store
        .id(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
}

/// One LSTM step: returns `(h, c)`.
pub fn lstm_cell(
    g: &mut Graph,
    cell: &LstmCell,
    x: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
) -> Result<(NodeId, NodeId), AutodiffError> {
    let d = cell.hidden_dim;
    if g.shape(x) != [cell.input_dim] || g.shape(h_prev) != [d] || g.shape(c_prev) != [d] {
        return Err(AutodiffError::Shape(format!(
            "lstm_cell expects x {:?}, h {:?}, c {:?}; got {:?}, {:?}, {:?}",
            [cell.input_dim],
            [d],
            [d],
            g.shape(x),
            g.shape(h_prev),
            g.shape(c_prev)
        )));
    }
    let w = g.param(cell.weights);
    let b = g.param(cell.bias);
    let xh = g.concat(&[x, h_prev])?;
    let z = g.matmul(w, xh)?;
    let z = g.add(z, b)?;
    let zi = g.slice(z, 0, d)?;
    let zf = g.slice(z, d, d)?;
    let zo = g.slice(z, 2 * d, d)?;
    let zg = g.slice(z, 3 * d, d)?;
    let i = g.sigmoid(zi)?;
    let f = g.sigmoid(zf)?;
    let o = g.sigmoid(zo)?;
    let cand = g.tanh(zg)?;
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c)?;
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

/// Runs `cell` over `xs` from a zero state and returns every hidden state.
pub fn run_lstm(g: &mut Graph, cell: &LstmCell, xs: &[NodeId]) -> Result<Vec<NodeId>, AutodiffError> {
    let zero = Tensor::zeros(&[cell.hidden_dim]);
    let mut h = g.input(zero.clone())?;
    let mut c = g.input(zero)?;
    let mut out = Vec::with_capacity(xs.len());
    for &x in xs {
        (h, c) = lstm_cell(g, cell, x, h, c)?;
        out.push(h);
    }
    Ok(out)
}

/// Two independent directions over a shared embedding table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BiLstm {
    pub embedding: ParamId,
    pub forward: LstmCell,
    pub backward: LstmCell,
}

impl BiLstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        embedding: ParamId,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let input_dim = store.value(embedding).shape()[1];
        Ok(BiLstm {
            embedding,
            forward: LstmCell::new(store, &format!("{prefix}.fwd"), input_dim, hidden_dim, rng)?,
            backward: LstmCell::new(store, &format!("{prefix}.bwd"), input_dim, hidden_dim, rng)?,
        })
    }

    pub fn find(store: &ParamStore, prefix: &str, embedding: &str) -> Result<Self> {
        Ok(BiLstm {
            embedding: find_param(store, embedding)?,
            forward: LstmCell::find(store, &format!("{prefix}.fwd"))?,
            backward: LstmCell::find(store, &format!("{prefix}.bwd"))?,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.forward.hidden_dim
    }

    fn embed(&self, g: &mut Graph, ids: &[usize]) -> Result<Vec<NodeId>, AutodiffError> {
        let table = g.param(self.embedding);
        ids.iter().map(|&i| g.embedding(table, i)).collect()
    }

    /// Forward states in order and backward states aligned to positions.
    fn run(&self, g: &mut Graph, ids: &[usize], what: &'static str) -> Result<(Vec<NodeId>, Vec<NodeId>), AutodiffError> {
        if ids.is_empty() {
            return Err(AutodiffError::Empty(what));
        }
        let xs = self.embed(g, ids)?;
        let fwd = run_lstm(g, &self.forward, &xs)?;
        let rev: Vec<NodeId> = xs.iter().rev().copied().collect();
        let mut bwd = run_lstm(g, &self.backward, &rev)?;
        bwd.reverse();
        Ok((fwd, bwd))
    }

    /// `forward_final + backward_final` over a property-value token sequence.
    pub fn encode_property_value(&self, g: &mut Graph, ids: &[usize]) -> Result<NodeId, AutodiffError> {
        let (fwd, bwd) = self.run(g, ids, "encode_property_value")?;
        // the backward direction ends at position 0
        g.add(fwd[fwd.len() - 1], bwd[0])
    }

    /// Encodes each pair independently with the same parameters.
    pub fn encode_property_set(&self, g: &mut Graph, pairs: &[Vec<usize>]) -> Result<Vec<NodeId>, AutodiffError> {
        if pairs.is_empty() {
            return Err(AutodiffError::Empty("encode_property_set"));
        }
        pairs.iter().map(|ids| self.encode_property_value(g, ids)).collect()
    }

    /// `[forward_t ; backward_t]` for every position.
    pub fn encode_sentence(&self, g: &mut Graph, ids: &[usize]) -> Result<Vec<NodeId>, AutodiffError> {
        let (fwd, bwd) = self.run(g, ids, "encode_sentence")?;
        fwd.iter().zip(&bwd).map(|(&f, &b)| g.concat(&[f, b])).collect()
    }
}

/// Input-side token ids of a pair: property, then value, then class tokens.
pub fn property_ids(pv: &PropertyValue, vocab: &Vocabulary) -> Vec<usize> {
    pv.input_tokens().map(|t| vocab.id(t)).collect()
}

/// An embedding table for `vocab`, seeded uniform in `±EMBED_INIT`.
pub fn init_embedding<R: Rng + ?Sized>(vocab: &Vocabulary, dim: usize, rng: &mut R) -> Tensor {
    Tensor::uniform(&[vocab.len(), dim], EMBED_INIT, rng)
}

/// Overwrites rows of `table` from a word2vec-style text file (`word f1 f2
/// ...` per line). Returns the number of vocabulary words covered.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary, table: &mut Tensor) -> Result<usize> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dim = table.shape()[1];
    let mut covered = 0;
    let mut seen = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let values: Vec<f64> = fields
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), n + 1)))?;
        // a "count dim" header line has one field after the first
        if values.len() == 1 && n == 0 {
            continue;
        }
        if values.len() != dim {
            return Err(Error::Config(format!(
                "{}:{}: expected {dim} values, got {}",
                path.display(),
                n + 1,
                values.len()
            )));
        }
        if let Some(id) = vocab.get(&word.to_lowercase()) {
            if seen.insert(id) {
                table.row_mut(id).copy_from_slice(&values);
                covered += 1;
            }
        }
    }
    Ok(covered)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(hidden: usize) -> (ParamStore, BiLstm) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let emb = store.add("emb", Tensor::uniform(&[10, 3], 0.5, &mut rng)).unwrap();
        let enc = BiLstm::new(&mut store, "enc", emb, hidden, &mut rng).unwrap();
        (store, enc)
    }

    #[test]
    fn sentence_shapes() {
        let (store, enc) = setup(4);
        let mut g = Graph::new(&store);
        let ws = enc.encode_sentence(&mut g, &[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(ws.len(), 5);
        assert!(ws.iter().all(|&w| g.shape(w) == [8]));
        let p = enc.encode_property_value(&mut g, &[1, 2, 3]).unwrap();
        assert_eq!(g.shape(p), [4]);
    }

    #[test]
    fn empty_inputs_rejected() {
        let (store, enc) = setup(4);
        let mut g = Graph::new(&store);
        assert!(enc.encode_sentence(&mut g, &[]).is_err());
        assert!(enc.encode_property_value(&mut g, &[]).is_err());
    }

    #[test]
    fn zero_backward_weights_leave_forward_final() {
        let (mut store, enc) = setup(4);
        let bw = enc.backward;
        store.get_mut(bw.weights).value.fill(0.0);
        store.get_mut(bw.bias).value.fill(0.0);
        let mut g = Graph::new(&store);
        let p = enc.encode_property_value(&mut g, &[2, 7]).unwrap();
        let xs = enc.embed(&mut g, &[2, 7]).unwrap();
        let fwd = run_lstm(&mut g, &enc.forward, &xs).unwrap();
        assert_eq!(g.value(p).data(), g.value(fwd[1]).data());
    }

    #[test]
    fn cell_dimension_mismatch() {
        let (store, enc) = setup(4);
        let mut g = Graph::new(&store);
        let x = g.input_vector(vec![0.0; 2]).unwrap();
        let h = g.input_vector(vec![0.0; 4]).unwrap();
        assert!(lstm_cell(&mut g, &enc.forward, x, h, h).is_err());
    }
}

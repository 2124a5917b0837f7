use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{alignment_fscore, calibrate_threshold, extract_alignments, margin_node, similarity_node, Prf, SimilarityResult};
use crate::autodiff::{Graph, NodeId, Optimizer, ParamId, ParamStore, Tensor};
use crate::corpus::{AlignmentSet, Example, PropertySet, VocabKind, Vocabulary};
use crate::encoders::{find_param, init_embedding, property_ids, BiLstm};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignerConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub margin: f64,
    /// Negative sentences and negative property sets per matched pair.
    pub negatives: usize,
    /// `a` in the `mean + a * std` threshold.
    pub threshold_coefficient: f64,
    /// Replaces the calibrated threshold when set.
    pub absolute_threshold: Option<f64>,
    pub vocab_cap: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for AlignerConfig {
    fn default() -> Self {
        AlignerConfig {
            embed_dim: 200,
            hidden_dim: 200,
            margin: 1.0,
            negatives: 1,
            threshold_coefficient: 0.75,
            absolute_threshold: None,
            vocab_cap: 50_000,
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.001,
            clip_norm: Some(5.0),
            seed: 1,
        }
    }
}

impl AlignerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin <= 0.0 {
            return Err(Error::Config(format!("aligner margin must be positive, got {}", self.margin)));
        }
        if self.negatives < 1 || self.batch_size < 2 || self.hidden_dim == 0 || self.embed_dim == 0 {
            return Err(Error::Config(
                "aligner needs negatives >= 1, batch_size >= 2 and nonzero dimensions".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub loss: f64,
    /// Matched pairs that contributed to the loss.
    pub pairs: usize,
}

/// The content aligner: one embedding table over a joint vocabulary, a
/// property encoder, a sentence encoder and a linear bridge taking `2h`-dim
/// word vectors into the `h`-dim property space.
#[derive(Clone, Debug)]
pub struct Aligner {
    pub params: ParamStore,
    pub vocab: Vocabulary,
    pub config: AlignerConfig,
    pub property_encoder: BiLstm,
    pub sentence_encoder: BiLstm,
    pub bridge: ParamId,
    /// Set by [`Aligner::calibrate`].
    pub threshold: Option<f64>,
}

/// A joint vocabulary over property and text tokens.
pub fn joint_vocabulary(corpus: &[Example], cap: usize) -> Result<Vocabulary> {
    let mut counts = BTreeMap::new();
    for ex in corpus {
        let input = ex.properties.pairs.iter().flat_map(|pv| pv.input_tokens());
        let output = ex.document.sentences.iter().flatten().map(String::as_str);
        for t in input.chain(output) {
            *counts.entry(t.to_string()).or_insert(0usize) += 1;
        }
    }
    Ok(Vocabulary::from_counts(VocabKind::Joint, &counts, cap)?)
}

impl Aligner {
    pub fn new(vocab: Vocabulary, config: AlignerConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let embedding = params.add("aligner.embedding", init_embedding(&vocab, config.embed_dim, &mut rng))?;
        let property_encoder = BiLstm::new(&mut params, "aligner.properties", embedding, config.hidden_dim, &mut rng)?;
        let sentence_encoder = BiLstm::new(&mut params, "aligner.sentences", embedding, config.hidden_dim, &mut rng)?;
        let h = config.hidden_dim;
        let bridge = params.add(
            "aligner.bridge",
            Tensor::uniform(&[h, 2 * h], 1.0 / (2.0 * h as f64).sqrt(), &mut rng),
        )?;
        Ok(Aligner {
            params,
            vocab,
            config,
            property_encoder,
            sentence_encoder,
            bridge,
            threshold: None,
        })
    }

    /// Builds the joint vocabulary from `corpus` and a fresh model over it.
    pub fn for_corpus(corpus: &[Example], config: AlignerConfig) -> Result<Self> {
        let vocab = joint_vocabulary(corpus, config.vocab_cap)?;
        Aligner::new(vocab, config)
    }

    /// Reassembles a model from restored parameters.
    pub fn from_parts(params: ParamStore, vocab: Vocabulary, config: AlignerConfig, threshold: Option<f64>) -> Result<Self> {
        let property_encoder = BiLstm::find(&params, "aligner.properties", "aligner.embedding")?;
        let sentence_encoder = BiLstm::find(&params, "aligner.sentences", "aligner.embedding")?;
        let bridge = find_param(&params, "aligner.bridge")?;
        Ok(Aligner {
            params,
            vocab,
            config,
            property_encoder,
            sentence_encoder,
            bridge,
            threshold,
        })
    }

    fn property_ids(&self, props: &PropertySet) -> Vec<Vec<usize>> {
        props.pairs.iter().map(|pv| property_ids(pv, &self.vocab)).collect()
    }

    /// Property vectors stacked and transposed to `[h, n]`.
    pub fn encode_properties(&self, g: &mut Graph, props: &PropertySet) -> Result<NodeId> {
        let ps = self.property_encoder.encode_property_set(g, &self.property_ids(props))?;
        let m = g.stack(&ps)?;
        Ok(g.transpose(m)?)
    }

    /// Sentence word vectors mapped into the property space.
    pub fn encode_words(&self, g: &mut Graph, sentence: &[String]) -> Result<Vec<NodeId>> {
        let ids = self.vocab.ids(sentence);
        let ws = self.sentence_encoder.encode_sentence(g, &ids)?;
        let bridge = g.param(self.bridge);
        Ok(ws.into_iter().map(|w| g.matmul(bridge, w)).collect::<std::result::Result<_, _>>()?)
    }

    /// One epoch over every (example, sentence) pair, in shuffled minibatches
    /// with negatives drawn from other entities of the same batch.
    pub fn train_epoch(&mut self, corpus: &[Example], optimizer: &mut Optimizer, rng: &mut ChaCha8Rng, epoch: usize) -> Result<EpochReport> {
        let mut pairs: Vec<(usize, usize)> = corpus
            .iter()
            .enumerate()
            .flat_map(|(e, ex)| {
                ex.document
                    .sentences
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| !s.is_empty())
                    .map(move |(s, _)| (e, s))
            })
            .collect();
        pairs.shuffle(rng);
        let mut total = 0.0;
        let mut count = 0;
        for batch in pairs.chunks(self.config.batch_size) {
            let plan = sample_negatives(batch, corpus, self.config.negatives, rng);
            if plan.is_empty() {
                continue;
            }
            let grads = {
                let mut g = Graph::new(&self.params);
                let mut props: HashMap<usize, NodeId> = HashMap::new();
                let mut words: HashMap<(usize, usize), Vec<NodeId>> = HashMap::new();
                for &(e, s) in batch {
                    if let std::collections::hash_map::Entry::Vacant(v) = props.entry(e) {
                        v.insert(self.encode_properties(&mut g, &corpus[e].properties)?);
                    }
                    words.insert((e, s), self.encode_words(&mut g, &corpus[e].document.sentences[s])?);
                }
                let mut terms = Vec::with_capacity(plan.len());
                for &(k, wrong_sentence, wrong_props) in &plan {
                    let (e, s) = batch[k];
                    let matched = similarity_node(&mut g, props[&e], &words[&(e, s)])?;
                    let ws = similarity_node(&mut g, props[&e], &words[&batch[wrong_sentence]])?;
                    let wp = similarity_node(&mut g, props[&batch[wrong_props].0], &words[&(e, s)])?;
                    terms.push(margin_node(&mut g, matched, ws, wp, self.config.margin)?);
                }
                let sum = g.sum_over(&terms)?;
                let loss = g.scale(sum, 1.0 / terms.len() as f64)?;
                total += g.scalar(loss)? * terms.len() as f64;
                count += terms.len();
                g.backward(loss)?
            };
            self.params.accumulate(&grads)?;
            optimizer.step(&mut self.params)?;
        }
        Ok(EpochReport {
            epoch,
            loss: if count > 0 { total / count as f64 } else { 0.0 },
            pairs: count,
        })
    }

    /// Trains for `config.epochs` epochs with Adam; returns the reports and
    /// the final optimizer state.
    pub fn train(
        &mut self,
        corpus: &[Example],
        mut on_epoch: impl FnMut(&EpochReport),
    ) -> Result<(Vec<EpochReport>, Optimizer)> {
        let mut optimizer =
            Optimizer::adam(self.config.learning_rate, &self.params).with_clip(self.config.clip_norm);
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed.wrapping_add(1));
        let mut reports = Vec::new();
        for epoch in 1..=self.config.epochs {
            let r = self.train_epoch(corpus, &mut optimizer, &mut rng, epoch)?;
            log::info!("aligner epoch {epoch}: loss {:.4} over {} pairs", r.loss, r.pairs);
            on_epoch(&r);
            reports.push(r);
        }
        Ok((reports, optimizer))
    }

    pub fn property_vectors(&self, props: &PropertySet) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new(&self.params);
        let pt = self.encode_properties(&mut g, props)?;
        let t = g.value(pt);
        let (h, n) = (t.shape()[0], t.shape()[1]);
        Ok((0..n).map(|i| (0..h).map(|r| t.data()[r * n + i]).collect()).collect())
    }

    pub fn word_vectors(&self, sentence: &[String]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new(&self.params);
        let ws = self.encode_words(&mut g, sentence)?;
        Ok(ws.iter().map(|&w| g.value(w).data().to_vec()).collect())
    }

    pub fn similarity(&self, props: &PropertySet, sentence: &[String]) -> Result<SimilarityResult> {
        Ok(super::pair_similarity(&self.property_vectors(props)?, &self.word_vectors(sentence)?)?)
    }

    /// Scores every sentence of `ex` against its own property set.
    pub fn score_document(&self, ex: &Example) -> Result<ScoredDocument> {
        let props = self.property_vectors(&ex.properties)?;
        let results = ex
            .document
            .sentences
            .iter()
            .map(|s| {
                if s.is_empty() {
                    return Ok(SimilarityResult {
                        score: 0.0,
                        per_word_best: Vec::new(),
                    });
                }
                Ok(super::pair_similarity(&props, &self.word_vectors(s)?)?)
            })
            .collect::<Result<_>>()?;
        Ok(ScoredDocument {
            results,
            excluded: ex.properties.empty_relation_index(),
        })
    }

    /// Sets the threshold from `dev`: the absolute override when configured,
    /// `mean + a * std` of the word-level best similarities otherwise.
    pub fn calibrate(&mut self, dev: &[ScoredDocument]) -> Result<f64> {
        let th = match self.config.absolute_threshold {
            Some(t) => t,
            None => {
                let scores: Vec<f64> = dev.iter().flat_map(ScoredDocument::word_scores).collect();
                calibrate_threshold(&scores, self.config.threshold_coefficient)?
            }
        };
        self.threshold = Some(th);
        Ok(th)
    }

    pub fn align(&self, ex: &Example) -> Result<AlignmentSet> {
        let th = self
            .threshold
            .ok_or_else(|| Error::Config("aligner threshold not calibrated".into()))?;
        self.score_document(ex)?.alignments(th)
    }

    /// Mean rank of each matched sentence among `k - 1` sentences of other
    /// entities. Only sentences with at least one link in `gold` are ranked
    /// when gold is given.
    pub fn mean_rank(&self, corpus: &[Example], gold: Option<&[&AlignmentSet]>, k: usize, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let all: Vec<(usize, usize)> = corpus
            .iter()
            .enumerate()
            .flat_map(|(e, ex)| (0..ex.document.sentences.len()).map(move |s| (e, s)))
            .filter(|&(e, s)| !corpus[e].document.sentences[s].is_empty())
            .collect();
        let mut words: HashMap<(usize, usize), Vec<Vec<f64>>> = HashMap::new();
        let mut ranks = Vec::new();
        for (e, ex) in corpus.iter().enumerate() {
            let props = self.property_vectors(&ex.properties)?;
            for s in 0..ex.document.sentences.len() {
                if ex.document.sentences[s].is_empty() {
                    continue;
                }
                if let Some(gold) = gold {
                    if gold[e].in_sentence(s).next().is_none() {
                        continue;
                    }
                }
                let others: Vec<(usize, usize)> = all.iter().copied().filter(|&(o, _)| o != e).collect();
                if others.len() < k - 1 {
                    return Err(Error::Config(format!("rank@{k} needs {} distractor sentences", k - 1)));
                }
                let distractors: Vec<(usize, usize)> = others.choose_multiple(&mut rng, k - 1).copied().collect();
                let mut score = |key: (usize, usize)| -> Result<f64> {
                    if let std::collections::hash_map::Entry::Vacant(e) = words.entry(key) {
                        let v = self.word_vectors(&corpus[key.0].document.sentences[key.1])?;
                        e.insert(v);
                    }
                    Ok(super::pair_similarity(&props, &words[&key])?.score)
                };
                let truth = score((e, s))?;
                let ds = distractors.iter().map(|&d| score(d)).collect::<Result<Vec<_>>>()?;
                ranks.push(super::rank_at_k(truth, &ds) as f64);
            }
        }
        if ranks.is_empty() {
            return Err(Error::Config("no sentences to rank".into()));
        }
        Ok(ranks.iter().sum::<f64>() / ranks.len() as f64)
    }
}

/// For each batch position, one wrong sentence and one wrong property set
/// from other entities, `negatives` times. Positions without any other
/// entity in the batch are dropped.
fn sample_negatives(batch: &[(usize, usize)], corpus: &[Example], negatives: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize, usize)> {
    let mut plan = Vec::new();
    for (k, &(e, _)) in batch.iter().enumerate() {
        let others: Vec<usize> = (0..batch.len())
            .filter(|&j| corpus[batch[j].0].entity_id() != corpus[e].entity_id())
            .collect();
        if others.is_empty() {
            continue;
        }
        for _ in 0..negatives {
            let ws = others[rng.gen_range(0..others.len())];
            let wp = others[rng.gen_range(0..others.len())];
            plan.push((k, ws, wp));
        }
    }
    plan
}

/// Per-sentence similarity results of one document.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredDocument {
    pub results: Vec<SimilarityResult>,
    /// Index of the empty relation, whose links are never emitted.
    pub excluded: Option<usize>,
}

impl ScoredDocument {
    pub fn word_scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.results.iter().flat_map(|r| r.per_word_best.iter().map(|&(_, v)| v))
    }

    pub fn alignments(&self, threshold: f64) -> Result<AlignmentSet> {
        let mut set = AlignmentSet::new();
        for (s, r) in self.results.iter().enumerate() {
            extract_alignments(s, r, threshold, self.excluded, &mut set)?;
        }
        Ok(set)
    }
}

/// Picks the coefficient `a` from `grid` maximising macro-F on scored dev
/// documents with gold links. Returns `(a, threshold, score)`.
pub fn tune_coefficient(dev: &[ScoredDocument], gold: &[&AlignmentSet], grid: &[f64]) -> Result<(f64, f64, Prf)> {
    let scores: Vec<f64> = dev.iter().flat_map(ScoredDocument::word_scores).collect();
    let mut best: Option<(f64, f64, Prf)> = None;
    for &a in grid {
        let th = calibrate_threshold(&scores, a)?;
        let predicted = dev.iter().map(|d| d.alignments(th)).collect::<Result<Vec<_>>>()?;
        let prf = alignment_fscore(predicted.iter().zip(gold.iter().copied()));
        if best.is_none_or(|(_, _, b)| prf.f > b.f) {
            best = Some((a, th, prf));
        }
    }
    best.ok_or_else(|| Error::Config("empty coefficient grid".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, SyntheticSpec};

    fn small() -> (Vec<Example>, AlignerConfig) {
        let mut corpus: Vec<Example> = generate_synthetic_corpus(3, 6, &SyntheticSpec::biographies())
            .unwrap()
            .into_iter()
            .map(|e| e.example)
            .collect();
        for ex in &mut corpus {
            ex.properties.add_empty_relation();
        }
        let config = AlignerConfig {
            embed_dim: 4,
            hidden_dim: 4,
            epochs: 2,
            batch_size: 8,
            ..Default::default()
        };
        (corpus, config)
    }

    #[test]
    fn training_is_deterministic() {
        let (corpus, config) = small();
        let mut a = Aligner::for_corpus(&corpus, config.clone()).unwrap();
        let mut b = Aligner::for_corpus(&corpus, config).unwrap();
        let (ra, _) = a.train(&corpus, |_| {}).unwrap();
        let (rb, _) = b.train(&corpus, |_| {}).unwrap();
        assert_eq!(ra, rb);
        assert!(ra[0].pairs > 0);
    }

    #[test]
    fn similarity_matches_decomposition() {
        let (corpus, config) = small();
        let a = Aligner::for_corpus(&corpus, config).unwrap();
        let r = a.similarity(&corpus[0].properties, &corpus[0].document.sentences[0]).unwrap();
        let sum: f64 = r.per_word_best.iter().map(|&(_, v)| v).sum();
        assert_eq!(r.score, sum);
        let mut g = Graph::new(&a.params);
        let pt = a.encode_properties(&mut g, &corpus[0].properties).unwrap();
        let ws = a.encode_words(&mut g, &corpus[0].document.sentences[0]).unwrap();
        let s = similarity_node(&mut g, pt, &ws).unwrap();
        assert!((g.scalar(s).unwrap() - r.score).abs() < 1e-12);
    }

    #[test]
    fn uncalibrated_align_errors() {
        let (corpus, config) = small();
        let a = Aligner::for_corpus(&corpus, config).unwrap();
        assert!(a.align(&corpus[0]).is_err());
    }
}

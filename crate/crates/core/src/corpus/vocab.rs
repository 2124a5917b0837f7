use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::delex::{delex_token, is_delex_token, NUMERIC, YEAR};
use super::{CorpusError, Example};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const EOS: &str = "<eos>";

/// Reserved tokens, in id order.
pub const RESERVED: [&str; 5] = [PAD, UNK, EOS, YEAR, NUMERIC];
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const YEAR_ID: usize = 3;
pub const NUMERIC_ID: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VocabKind {
    Input,
    Output,
    Joint,
}

/// Bijection between tokens and `0..len`. Ids below [`RESERVED`]`.len()`
/// are the reserved tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    kind: VocabKind,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    kind: VocabKind,
    tokens: Vec<String>,
}

impl From<VocabRepr> for Vocabulary {
    fn from(r: VocabRepr) -> Self {
        Vocabulary::from_tokens(r.kind, r.tokens)
    }
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        VocabRepr {
            kind: v.kind,
            tokens: v.tokens,
        }
    }
}

impl Vocabulary {
    fn from_tokens(kind: VocabKind, tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { kind, tokens, index }
    }

    /// Reserved tokens followed by the most frequent tokens (ties broken
    /// lexicographically), `cap` entries in total.
    pub fn from_counts(kind: VocabKind, counts: &BTreeMap<String, usize>, cap: usize) -> Result<Self, CorpusError> {
        if cap < RESERVED.len() {
            return Err(CorpusError::Invalid(format!(
                "vocabulary cap {cap} is below the {} reserved tokens",
                RESERVED.len()
            )));
        }
        let mut ranked: Vec<(&String, &usize)> = counts
            .iter()
            .filter(|(t, _)| !RESERVED.contains(&t.as_str()))
            .collect();
        // BTreeMap iteration is lexicographic; a stable sort keeps that for ties.
        ranked.sort_by(|a, b| b.1.cmp(a.1));
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(ranked.into_iter().take(cap - RESERVED.len()).map(|(t, _)| t.clone()));
        Ok(Vocabulary::from_tokens(kind, tokens))
    }

    /// Union of two vocabularies, `first`'s order then new tokens of `second`.
    pub fn union(first: &Vocabulary, second: &Vocabulary) -> Vocabulary {
        let mut tokens = first.tokens.clone();
        for t in &second.tokens {
            if !first.index.contains_key(t) {
                tokens.push(t.clone());
            }
        }
        Vocabulary::from_tokens(VocabKind::Joint, tokens)
    }

    pub fn kind(&self) -> VocabKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Id of `token`, or the UNK id.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK_ID)
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabCaps {
    pub input: usize,
    pub output: usize,
}

impl VocabCaps {
    /// Content-aligner sizes.
    pub const ALIGNER: VocabCaps = VocabCaps {
        input: 50_000,
        output: 50_000,
    };
    /// Generator sizes.
    pub const GENERATOR: VocabCaps = VocabCaps {
        input: 50_000,
        output: 20_000,
    };
}

fn input_counts(corpus: &[Example]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for ex in corpus {
        for pv in &ex.properties.pairs {
            for t in pv.input_tokens() {
                *counts.entry(t.to_string()).or_insert(0) += 1;
            }
        }
    }
    counts
}

fn output_counts(corpus: &[Example]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for ex in corpus {
        for t in ex.document.sentences.iter().flatten() {
            *counts.entry(t.clone()).or_insert(0) += 1;
        }
    }
    counts
}

/// Builds input and output vocabularies.
///
/// Text words that miss the provisional output vocabulary but are attested
/// in the input vocabulary are first rewritten to property-position tokens,
/// then the output vocabulary is recounted over the rewritten text.
pub fn build_vocabularies(corpus: &[Example], caps: VocabCaps) -> Result<(Vocabulary, Vocabulary), CorpusError> {
    let input = Vocabulary::from_counts(VocabKind::Input, &input_counts(corpus), caps.input)?;
    let provisional = Vocabulary::from_counts(VocabKind::Output, &output_counts(corpus), caps.output)?;
    let rewritten: Vec<Example> = corpus
        .iter()
        .map(|ex| rewrite_oov(ex, &input, &provisional, false))
        .collect::<Result<_, _>>()?;
    let output = Vocabulary::from_counts(VocabKind::Output, &output_counts(&rewritten), caps.output)?;
    Ok((input, output))
}

/// Maps every out-of-vocabulary token to a property-position token (text
/// words attested in the input vocabulary) or UNK.
pub fn apply_vocabularies(example: &Example, input: &Vocabulary, output: &Vocabulary) -> Result<Example, CorpusError> {
    rewrite_oov(example, input, output, true)
}

fn rewrite_oov(example: &Example, input: &Vocabulary, output: &Vocabulary, finalise: bool) -> Result<Example, CorpusError> {
    let mut out = example.clone();
    // first (property, position) holding each input-vocabulary value word
    let mut position_of: HashMap<&str, String> = HashMap::new();
    for pv in &example.properties.pairs {
        if pv.is_empty_relation() {
            continue;
        }
        let name = pv.property_name();
        for (k, t) in pv.value.iter().enumerate() {
            if input.contains(t) && !is_delex_token(t) {
                position_of.entry(t.as_str()).or_insert_with(|| delex_token(&name, k + 1));
            }
        }
    }
    for sentence in &mut out.document.sentences {
        for tok in sentence.iter_mut() {
            if output.contains(tok) {
                continue;
            }
            match position_of.get(tok.as_str()) {
                // a multi-valued property can claim one key for two surfaces;
                // such words fall through to UNK
                Some(key)
                    if (!finalise || output.contains(key))
                        && out.document.delex_map.insert(key.clone(), tok.clone()).is_ok() =>
                {
                    *tok = key.clone();
                }
                _ if finalise => *tok = UNK.to_string(),
                _ => {}
            }
        }
    }
    if finalise {
        for pv in &mut out.properties.pairs {
            for t in pv.property.iter_mut().chain(pv.value.iter_mut()).chain(pv.class_label.iter_mut().flatten()) {
                if !input.contains(t) {
                    *t = UNK.to_string();
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, PropertySet, PropertyValue};

    fn ex(props: &[(&str, &str)], text: &str) -> Example {
        let pairs = props.iter().map(|(p, v)| PropertyValue::new(p, v).unwrap()).collect();
        let doc = Document::new(vec![text.split_whitespace().map(str::to_string).collect()]);
        Example::new(PropertySet::new("e", pairs), doc)
    }

    #[test]
    fn frequency_ranked_with_reserved_prefix() {
        let corpus = vec![ex(&[("p", "v")], "a a b")];
        let (_, out) = build_vocabularies(&corpus, VocabCaps { input: 10, output: 10 }).unwrap();
        assert_eq!(&out.tokens()[..RESERVED.len()], &RESERVED.map(String::from));
        assert_eq!(out.token(RESERVED.len()), "a");
        assert_eq!(out.token(RESERVED.len() + 1), "b");
        assert_eq!(out.len(), RESERVED.len() + 2);
    }

    #[test]
    fn ties_break_lexicographically() {
        let corpus = vec![ex(&[("p", "v")], "zeta alpha mid")];
        let (_, out) = build_vocabularies(&corpus, VocabCaps { input: 10, output: 10 }).unwrap();
        assert_eq!(&out.tokens()[RESERVED.len()..], &["alpha", "mid", "zeta"]);
    }

    #[test]
    fn cap_at_reserved_count_keeps_only_reserved() {
        let corpus = vec![ex(&[("p", "v")], "a a b")];
        let caps = VocabCaps { input: RESERVED.len(), output: RESERVED.len() };
        let (inp, out) = build_vocabularies(&corpus, caps).unwrap();
        assert_eq!(out.len(), RESERVED.len());
        assert_eq!(inp.len(), RESERVED.len());
    }

    #[test]
    fn cap_below_reserved_is_an_error() {
        let corpus = vec![ex(&[("p", "v")], "a")];
        assert!(build_vocabularies(&corpus, VocabCaps { input: 2, output: 10 }).is_err());
    }

    #[test]
    fn oov_text_word_attested_in_input_becomes_position_token() {
        // Surnames are individually rare but share the spouse position-2
        // token, which outranks each of them once rewritten.
        let corpus = vec![
            ex(&[("spouse", "frances flaherty")], "the the the married married flaherty"),
            ex(&[("spouse", "ann lee")], "the married lee"),
            ex(&[("spouse", "bo kim")], "the married kim"),
        ];
        let caps = VocabCaps { input: 50, output: 8 };
        let (inp, out) = build_vocabularies(&corpus, caps).unwrap();
        assert!(out.contains("DLX_spouse_2"));
        let applied = apply_vocabularies(&corpus[0], &inp, &out).unwrap();
        assert_eq!(applied.document.sentences[0].last().unwrap(), "DLX_spouse_2");
        assert_eq!(applied.document.delex_map.get("DLX_spouse_2"), Some("flaherty"));
    }

    #[test]
    fn remaining_oov_becomes_unk() {
        let corpus = vec![ex(&[("p", "v")], "a a b c")];
        let caps = VocabCaps { input: 50, output: 6 };
        let (inp, out) = build_vocabularies(&corpus, caps).unwrap();
        let applied = apply_vocabularies(&corpus[0], &inp, &out).unwrap();
        assert_eq!(applied.document.sentences[0], vec!["a", "a", UNK, UNK]);
    }

    #[test]
    fn serde_round_trip_rebuilds_index() {
        let corpus = vec![ex(&[("p", "v")], "a a b")];
        let (_, out) = build_vocabularies(&corpus, VocabCaps { input: 10, output: 10 }).unwrap();
        let json = serde_json::to_string(&out).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, out);
        assert_eq!(back.get("b"), out.get("b"));
    }
}

use serde::{Deserialize, Serialize};

use super::vocab::UNK;
use super::{CorpusError, Example};

/// Size and UNK limits applied by [`filter_corpus`]. Property counts
/// exclude the empty relation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterLimits {
    pub min_pairs: usize,
    pub max_pairs: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub min_tokens: usize,
    pub max_text_unks: Option<usize>,
    pub max_value_unks: Option<usize>,
}

impl Default for FilterLimits {
    fn default() -> Self {
        FilterLimits {
            min_pairs: 6,
            max_pairs: 50,
            min_sentences: 2,
            max_sentences: 12,
            min_tokens: 23,
            max_text_unks: None,
            max_value_unks: None,
        }
    }
}

impl FilterLimits {
    /// Limits for the content-aligner corpus.
    pub fn aligner() -> Self {
        FilterLimits {
            max_text_unks: Some(3),
            ..Default::default()
        }
    }

    /// Limits for the generator corpus.
    pub fn generator() -> Self {
        FilterLimits {
            max_text_unks: Some(5),
            max_value_unks: Some(2),
            ..Default::default()
        }
    }

    pub fn accepts(&self, ex: &Example) -> bool {
        let pairs = ex.properties.content_len();
        let sentences = ex.document.sentences.len();
        let tokens = ex.document.num_tokens();
        if pairs < self.min_pairs || pairs > self.max_pairs {
            return false;
        }
        if sentences < self.min_sentences || sentences > self.max_sentences || tokens < self.min_tokens {
            return false;
        }
        if let Some(cap) = self.max_text_unks {
            let unks = ex.document.sentences.iter().flatten().filter(|t| *t == UNK).count();
            if unks > cap {
                return false;
            }
        }
        if let Some(cap) = self.max_value_unks {
            let worst = ex
                .properties
                .pairs
                .iter()
                .map(|pv| pv.value.iter().filter(|t| *t == UNK).count())
                .max()
                .unwrap_or(0);
            if worst > cap {
                return false;
            }
        }
        true
    }
}

/// Keeps the examples satisfying `limits`. An empty result is an error.
pub fn filter_corpus(examples: Vec<Example>, limits: &FilterLimits) -> Result<Vec<Example>, CorpusError> {
    let before = examples.len();
    let kept: Vec<Example> = examples.into_iter().filter(|ex| limits.accepts(ex)).collect();
    if kept.is_empty() {
        return Err(CorpusError::Exhausted { before });
    }
    log::debug!("filter kept {} of {before} examples", kept.len());
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, PropertySet, PropertyValue};

    fn example(n_pairs: usize, sentences: &[usize]) -> Example {
        let pairs = (0..n_pairs)
            .map(|i| PropertyValue::new(&format!("p{i}"), "v").unwrap())
            .collect();
        let sents = sentences.iter().map(|&n| vec!["w".to_string(); n]).collect();
        Example::new(PropertySet::new("e", pairs), Document::new(sents))
    }

    #[test]
    fn five_pairs_removed() {
        let limits = FilterLimits::default();
        assert!(!limits.accepts(&example(5, &[12, 12])));
        assert!(limits.accepts(&example(6, &[12, 12])));
    }

    #[test]
    fn one_sentence_removed() {
        assert!(!FilterLimits::default().accepts(&example(8, &[30])));
    }

    #[test]
    fn token_floor_and_ceilings() {
        let l = FilterLimits::default();
        assert!(!l.accepts(&example(8, &[11, 11])));
        assert!(!l.accepts(&example(51, &[12, 12])));
        assert!(!l.accepts(&example(8, &[3; 13])));
    }

    #[test]
    fn empty_relation_not_counted() {
        let mut ex = example(5, &[12, 12]);
        ex.properties.add_empty_relation();
        assert!(!FilterLimits::default().accepts(&ex));
    }

    #[test]
    fn unk_caps() {
        let mut ex = example(6, &[12, 12]);
        for t in ex.document.sentences[0].iter_mut().take(4) {
            *t = UNK.into();
        }
        assert!(!FilterLimits::aligner().accepts(&ex));
        assert!(FilterLimits::generator().accepts(&ex));
        ex.properties.pairs[0].value = vec![UNK.into(); 3];
        assert!(!FilterLimits::generator().accepts(&ex));
    }

    #[test]
    fn valid_example_retained_unchanged() {
        let ex = example(7, &[12, 12]);
        let out = filter_corpus(vec![ex.clone()], &FilterLimits::default()).unwrap();
        assert_eq!(out, vec![ex]);
    }

    #[test]
    fn exhausted_corpus_is_an_error() {
        let r = filter_corpus(vec![example(2, &[1])], &FilterLimits::default());
        assert!(matches!(r, Err(CorpusError::Exhausted { before: 1 })));
    }
}

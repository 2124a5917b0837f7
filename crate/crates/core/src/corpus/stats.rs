use std::fmt;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Example};

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(MeanSd { mean, sd: var.sqrt() })
    }
}

impl fmt::Display for MeanSd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}±{:.2}", self.mean, self.sd)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub size: usize,
    pub sentences: MeanSd,
    pub tokens: MeanSd,
    /// Property-value pairs, empty relation excluded.
    pub properties: MeanSd,
    /// Pooled over all sentences of the corpus.
    pub sentence_length: MeanSd,
}

pub fn corpus_stats(corpus: &[Example]) -> Result<CorpusStats, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::Exhausted { before: 0 });
    }
    let per = |f: &dyn Fn(&Example) -> usize| -> MeanSd {
        let xs: Vec<f64> = corpus.iter().map(|e| f(e) as f64).collect();
        MeanSd::of(&xs).expect("nonempty")
    };
    let lengths: Vec<f64> = corpus
        .iter()
        .flat_map(|e| e.document.sentences.iter().map(|s| s.len() as f64))
        .collect();
    Ok(CorpusStats {
        size: corpus.len(),
        sentences: per(&|e| e.document.sentences.len()),
        tokens: per(&|e| e.document.num_tokens()),
        properties: per(&|e| e.properties.content_len()),
        sentence_length: MeanSd::of(&lengths).unwrap_or(MeanSd { mean: 0.0, sd: 0.0 }),
    })
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "size\t{}", self.size)?;
        writeln!(f, "sentences\t{}", self.sentences)?;
        writeln!(f, "tokens\t{}", self.tokens)?;
        writeln!(f, "properties\t{}", self.properties)?;
        write!(f, "sent.len\t{}", self.sentence_length)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, PropertySet};

    fn doc(n: usize) -> Example {
        Example::new(PropertySet::new("e", vec![]), Document::new(vec![vec!["w".into()]; n]))
    }

    #[test]
    fn single_example() {
        let s = corpus_stats(&[doc(3)]).unwrap();
        assert_eq!(s.size, 1);
        assert_eq!(s.sentences, MeanSd { mean: 3.0, sd: 0.0 });
    }

    #[test]
    fn population_sd() {
        let s = corpus_stats(&[doc(2), doc(4)]).unwrap();
        assert_eq!(s.sentences, MeanSd { mean: 3.0, sd: 1.0 });
    }

    #[test]
    fn empty_corpus_errors() {
        assert!(corpus_stats(&[]).is_err());
    }
}

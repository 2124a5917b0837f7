//! Corpus ingestion, filtering, delexicalisation, vocabularies, statistics
//! and the synthetic oracle corpus.

pub mod delex;
mod filter;
pub mod io;
mod stats;
pub mod synthetic;
pub mod text;
mod types;
pub mod vocab;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use delex::{delexicalise, normalize_example_dates, relexicalisation_map, relexicalise, Relexicalised};
pub use filter::{filter_corpus, FilterLimits};
pub use stats::{corpus_stats, CorpusStats, MeanSd};
pub use synthetic::{generate_synthetic_corpus, SyntheticExample, SyntheticSpec};
pub use types::{AlignmentSet, DelexMap, Document, Example, Link, PropertySet, PropertyValue, EMPTY_RELATION};
pub use vocab::{apply_vocabularies, build_vocabularies, VocabCaps, VocabKind, Vocabulary};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus exhausted: no example out of {before} survived filtering")]
    Exhausted { before: usize },
    #[error("delexicalisation collision on {key}: {first:?} vs {second:?}")]
    DelexCollision { key: String, first: String, second: String },
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Preprocessing settings for one of the two corpora.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    pub caps: VocabCaps,
    pub limits: FilterLimits,
    /// Replace numerals by delexicalisation tokens.
    pub delexicalise: bool,
}

impl PreprocessConfig {
    /// The aligner reads numerals verbatim: entity-specific numbers are what
    /// tells one property set from another.
    pub fn aligner() -> Self {
        PreprocessConfig {
            caps: VocabCaps::ALIGNER,
            limits: FilterLimits::aligner(),
            delexicalise: false,
        }
    }

    pub fn generator() -> Self {
        PreprocessConfig {
            caps: VocabCaps::GENERATOR,
            limits: FilterLimits::generator(),
            delexicalise: true,
        }
    }
}

/// Full preprocessing: date normalisation, delexicalisation, the empty
/// relation, vocabulary rewriting, then filtering. UNK caps are therefore
/// checked after delexicalisation has rescued what it can. Every step maps
/// tokens one to one except date normalisation, so word positions of
/// already normalised text survive.
pub fn preprocess(corpus: &[Example], config: &PreprocessConfig) -> Result<(Vec<Example>, Vocabulary, Vocabulary), CorpusError> {
    let delexed: Vec<Example> = corpus
        .iter()
        .map(|ex| normalise(ex, config.delexicalise))
        .collect::<Result<_, CorpusError>>()?;
    let (input, output) = build_vocabularies(&delexed, config.caps)?;
    let rewritten: Vec<Example> = delexed
        .iter()
        .map(|ex| apply_vocabularies(ex, &input, &output))
        .collect::<Result<_, _>>()?;
    let kept = filter_corpus(rewritten, &config.limits)?;
    Ok((kept, input, output))
}

fn normalise(ex: &Example, delex: bool) -> Result<Example, CorpusError> {
    let normalized = normalize_example_dates(ex);
    let mut out = if delex { delexicalise(&normalized)? } else { normalized };
    out.properties.add_empty_relation();
    Ok(out)
}

/// Prepares a held-out example with vocabularies from [`preprocess`]; no
/// filtering.
pub fn prepare(ex: &Example, config: &PreprocessConfig, input: &Vocabulary, output: &Vocabulary) -> Result<Example, CorpusError> {
    apply_vocabularies(&normalise(ex, config.delexicalise)?, input, output)
}

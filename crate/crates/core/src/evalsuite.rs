//! Corpus-level BLEU and the first-sentence protocol.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use crate::corpus::text::first_sentence;

pub const MAX_ORDER: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Smoothing {
    /// The original definition: any empty n-gram match gives BLEU 0.
    #[default]
    None,
    /// Add one to matches and totals for orders above 1. For debugging
    /// short texts only; not comparable with unsmoothed scores.
    AddOne,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    pub bleu: f64,
    pub precisions: [f64; MAX_ORDER],
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub brevity_penalty: f64,
    pub candidate_length: usize,
    pub reference_length: usize,
    pub smoothing: Smoothing,
}

impl fmt::Display for BleuReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "bleu4\t{:.6}", self.bleu)?;
        for n in 0..MAX_ORDER {
            writeln!(
                f,
                "p{}\t{:.6}\t{}/{}",
                n + 1,
                self.precisions[n],
                self.matches[n],
                self.totals[n]
            )?;
        }
        writeln!(f, "brevity_penalty\t{:.6}", self.brevity_penalty)?;
        writeln!(f, "candidate_length\t{}", self.candidate_length)?;
        writeln!(f, "reference_length\t{}", self.reference_length)?;
        write!(
            f,
            "smoothing\t{}",
            match self.smoothing {
                Smoothing::None => "none",
                Smoothing::AddOne => "add-one",
            }
        )
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn lower<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    tokens.iter().map(|t| t.as_ref().to_lowercase()).collect()
}

/// Unsmoothed corpus BLEU-4.
pub fn bleu4<S: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<Vec<S>>]) -> Result<BleuReport> {
    bleu(candidates, references, Smoothing::None)
}

/// Corpus BLEU-4 with clipped n-gram counts, several references per
/// candidate and the closest reference length for the brevity penalty.
/// Matching is case-insensitive.
pub fn bleu<S: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<Vec<S>>], smoothing: Smoothing) -> Result<BleuReport> {
    if candidates.is_empty() {
        return Err(Error::Config("BLEU over an empty candidate corpus".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::Config(format!(
            "{} candidates but {} reference lists",
            candidates.len(),
            references.len()
        )));
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (k, (cand, refs)) in candidates.iter().zip(references).enumerate() {
        if refs.is_empty() {
            return Err(Error::Config(format!("candidate {k} has no reference")));
        }
        let cand = lower(cand);
        let refs: Vec<Vec<String>> = refs.iter().map(|r| lower(r)).collect();
        cand_len += cand.len();
        // closest length, shorter reference on ties
        ref_len += refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(cand.len()), l))
            .unwrap_or(0);
        for n in 1..=MAX_ORDER {
            let counts = ngram_counts(&cand, n);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in &refs {
                for (g, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (g, c) in counts {
                matches[n - 1] += c.min(max_ref.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += cand.len().saturating_sub(n - 1);
        }
    }
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        let (m, t) = match smoothing {
            Smoothing::AddOne if n > 0 => (matches[n] + 1, totals[n] + 1),
            _ => (matches[n], totals[n]),
        };
        precisions[n] = if t == 0 { 0.0 } else { m as f64 / t as f64 };
    }
    let brevity_penalty = if cand_len == 0 {
        0.0
    } else if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    let bleu = if precisions.contains(&0.0) {
        0.0
    } else {
        brevity_penalty * (precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64).exp()
    };
    Ok(BleuReport {
        bleu,
        precisions,
        matches,
        totals,
        brevity_penalty,
        candidate_length: cand_len,
        reference_length: ref_len,
        smoothing,
    })
}

/// Mean BLEU of each text against each other text, over ordered pairs.
pub fn mean_pairwise_bleu<S: AsRef<str>>(texts: &[Vec<S>]) -> Result<f64> {
    if texts.len() < 2 {
        return Err(Error::Config("pairwise BLEU needs at least two texts".into()));
    }
    let mut sum = 0.0;
    let mut n = 0;
    for (i, a) in texts.iter().enumerate() {
        for (j, b) in texts.iter().enumerate() {
            if i != j {
                let b: Vec<&str> = b.iter().map(AsRef::as_ref).collect();
                let a: Vec<&str> = a.iter().map(AsRef::as_ref).collect();
                sum += bleu4(&[a], &[vec![b]])?.bleu;
                n += 1;
            }
        }
    }
    Ok(sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn identity_is_one() {
        let c = t("robert flaherty was an american film-maker .");
        let r = bleu4(&[c.clone()], &[vec![c]]).unwrap();
        assert_eq!(r.bleu, 1.0);
        assert_eq!(r.brevity_penalty, 1.0);
    }

    #[test]
    fn clipped_unigrams() {
        let r = bleu4(&[t("the the the")], &[vec![t("the cat")]]).unwrap();
        assert_eq!(r.matches[0], 1);
        assert_eq!(r.totals[0], 3);
        assert_eq!(r.bleu, 0.0);
    }

    #[test]
    fn brevity_uses_closest_reference() {
        let r = bleu4(&[t("a b c d")], &[vec![t("a b c d e f g h"), t("a b c d e")]]).unwrap();
        assert_eq!(r.reference_length, 5);
        assert!((r.brevity_penalty - (1.0f64 - 5.0 / 4.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn case_insensitive_and_errors() {
        let r = bleu4(&[t("The Cat sat on the mat")], &[vec![t("the cat sat on the mat")]]).unwrap();
        assert_eq!(r.bleu, 1.0);
        assert!(bleu4::<String>(&[], &[]).is_err());
        assert!(bleu4(&[t("a")], &[vec![]]).is_err());
    }

    #[test]
    fn smoothing_is_labelled() {
        let r = bleu(&[t("the cat")], &[vec![t("the dog")]], Smoothing::AddOne).unwrap();
        assert!(r.bleu > 0.0);
        assert!(r.to_string().contains("add-one"));
    }

    #[test]
    fn first_sentence_protocol() {
        assert_eq!(first_sentence(&t("A . B .")), t("A ."));
        assert_eq!(first_sentence(&t("no terminator here")), t("no terminator here"));
    }

    #[test]
    fn identical_texts_agree() {
        let x = t("he played as a defender .");
        assert_eq!(mean_pairwise_bleu(&[x.clone(), x.clone(), x]).unwrap(), 1.0);
    }
}

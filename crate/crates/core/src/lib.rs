//! Bootstrapping data-to-text generators from loosely aligned
//! property-set/text pairs.
//!
//! The pipeline: [`corpus`] ingestion and delexicalisation, a
//! multi-instance [`aligner`] that links words to properties, and attention
//! encoder-decoder [`generator`]s trained by likelihood, by the multi-task
//! objective in [`mtl`], or by REINFORCE in [`rl`]. [`template`] is the
//! rule-based baseline and [`evalsuite`] scores everything with BLEU.

pub mod aligner;
pub mod autodiff;
pub mod checkpoint;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod evalsuite;
pub mod generator;
pub mod mtl;
pub mod rl;
pub mod template;

pub use error::{Error, Result};

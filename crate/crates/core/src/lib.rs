//! Distant supervision as a regularizer.
//!
//! Hard-negative examples are retrieved with surface-level rules (lexicon hits,
//! keyword counts, ROUGE-L thresholds) and mapped into auxiliary label schemes.
//! The target objective is then trained jointly with the auxiliary objectives
//! over one shared encoder:
//!
//! * [`classifier`]: three softmax heads (`y`, `z`, `l`) over a pooled text
//!   representation, plus the two-stage pipelined baseline.
//! * [`crf`]: three linear-chain CRF heads over per-token features with
//!   `y`-only Viterbi decoding.
//! * [`span_qa`]: ROUGE-L gold span selection, α-threshold hard-negative spans
//!   and a span selector built on the classifier heads.
//!
//! All gradients are written by hand and checked against finite differences in
//! the test suites.

pub mod checkpoint;
pub mod classifier;
pub mod corpus;
pub mod crf;
pub mod encoder;
mod error;
pub mod harness;
pub mod metrics;
pub mod mining;
pub mod rng;
pub mod saliency;
pub mod span_qa;
pub mod tensor;

pub use error::{Error, Result};

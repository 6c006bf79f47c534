//! Predicting next-day stock movement from earnings-call answers.
//!
//! The pipeline: transcripts are parsed and their Answer components split into
//! sentences ([`corpus`]), sentences become pooled word-vector averages and maxima
//! ([`embeddings`]), an attention layer weighs them into one transcript vector that
//! is joined with a learned sector embedding and classified ([`model`]). Labels come
//! from closing prices around the call date ([`labels`]), the comparison systems live
//! in [`baselines`] and the holdout protocol and metrics in [`eval`].

pub mod baselines;
pub mod corpus;
pub mod embeddings;
mod error;
pub mod eval;
pub mod labels;
pub mod model;
pub mod pipeline;
pub mod synth;

pub use error::{Error, ErrorKind, Result};

//! Lexicon-based binary text classification with per-word predictiveness
//! weights estimated from unlabeled text.
//!
//! Each lexicon word carries a predictiveness `gamma` in `[0, 1)`; the word is
//! `(1 + gamma) / (1 - gamma)` times more likely under its own label than the
//! opposite one. The weights are fitted without labels by matching
//! cross-lexicon co-occurrence counts to their model expectations, subject to
//! both class distributions summing to one.

pub mod analysis;
pub mod corpus;
pub mod error;
pub mod harness;
pub mod lexicon;
pub mod model;
pub mod moments;
pub mod solver;

pub use error::{Error, Result};

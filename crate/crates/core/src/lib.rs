//! Tokenisation-bias toolkit.
//!
//! The crate is organised around the stages of a bias measurement:
//!
//! - [`tokeniser`]: ranked bottom-up vocabularies (BPE-count or WordPiece-PMI
//!   objectives) and truncated tokenisers over them.
//! - [`lm`]: subword-level log-probability backends (uniform, add-α n-gram,
//!   exact oracle over a finite language, externally produced log-probs).
//! - [`outcomes`]: candidate subwords around a vocabulary cutoff and their
//!   aggregated log-probability outcomes on evaluation text.
//! - [`rd`]: regression-discontinuity fits of the jump at the cutoff.
//! - [`pipeline`]: declarative configuration tying the stages together.
//!
//! Data-parallel loops go through [`Execution`]; with the `parallel` feature
//! disabled every loop runs sequentially and produces identical results.

pub mod error;
mod fsio;
pub mod lm;
pub mod outcomes;
mod parallel;
pub mod pipeline;
pub mod rd;
pub mod tokeniser;

pub use error::{Error, Result};
pub use parallel::Execution;

//! Parallel iterative edit (PIE) models for local sequence transduction.
//!
//! Text pairs are compiled into one in-place edit per source token, a small
//! transformer labels every token with an edit in a single parallel pass,
//! and decoding re-applies the model to its own output until it settles.

pub mod corpuskit;
pub mod editspace;
pub mod error;
pub mod fsio;
pub mod inference;
pub mod numcore;
pub mod piemodel;
pub mod synthdata;
pub mod training;

pub use error::{CheckpointError, PieError, Result};

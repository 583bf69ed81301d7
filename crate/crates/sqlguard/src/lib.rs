//! Grammar-guarded translation of natural-language questions into
//! executable SQL.
//!
//! The crate combines a BNF grammar engine (parsing, LL(1) analysis,
//! pushdown state tracking), dependency-rule vocabulary masks, a
//! from-scratch LSTM encoder-decoder, an in-memory SQL executor and a
//! synthetic workload generator with evaluation metrics.

pub mod cli;
pub mod engine;
pub mod executor;
pub mod grammar;
pub mod metrics;
pub mod nn;
pub mod patterns;
pub mod rules;
pub mod schema;
pub mod tagger;
pub mod tracker;
pub mod vocab;
pub mod workload;

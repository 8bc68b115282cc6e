//! Core engine for `adlcoach`, a simulator of assessment participants.
//!
//! An assessor types a query, the query is classified into an activities of
//! daily living domain, and the engine either answers verbatim from a
//! profile's knowledge base (when lexical similarity clears a threshold) or
//! falls back to an instruction-following LLM with a templated prompt.
//!
//! Module map:
//!
//! * [`corpus`] - survey ingestion, scrubbing, splits, stratified sampling
//! * [`profiles`] - synthetic profiles, functioning phrases, knowledge base
//! * [`classifier`] - bag-of-words multinomial logistic regression + metrics
//! * [`retrieval`] - similarity scorers and the threshold routing rule
//! * [`generation`] - prompt templates, LLM client, fine-tune export
//! * [`dialogue`] - sessions and the per-query pipeline
//! * [`evalharness`] - SSA aggregation, contradiction ledgers, test scripts
//! * [`config`] - runtime configuration shared by the CLI and the server

pub mod classifier;
pub mod config;
pub mod corpus;
pub mod dialogue;
pub mod domains;
pub mod evalharness;
pub mod generation;
pub mod parallel;
pub mod profiles;
pub mod retrieval;
mod rounding;

pub use rounding::round_half_up_2dp;

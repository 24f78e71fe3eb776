//! Radiology report corpora to instruction-tuning datasets, impression
//! generation against pluggable model backends, and a blind multi-rater
//! rubric study for the generated impressions.

pub mod corpus;
pub mod dataset;
pub mod eval;
pub mod fsutil;
pub mod gateway;
pub mod jsonl;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod service;
pub mod split;

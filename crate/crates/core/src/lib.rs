//! Consensus annotation toolkit for repeated LLM labeling runs.
//!
//! The pipeline has three legs:
//!
//! 1. [`annotator`] drives N independent completions per text against an
//!    OpenAI-compatible endpoint (or a seeded mock) and records every run.
//! 2. [`aggregation`] reduces the N runs per item to a consensus label set,
//!    and [`reliability`] quantifies inter-run agreement with per-label
//!    binary Fleiss' kappa.
//! 3. [`effectsize`] scores classifier predictions against a gold view with
//!    weighted F1 normalized by an analytic random baseline (kappa-F1).
//!
//! [`datasets`] turns consensus output into persisted, stratified
//! train/dev/test bundles; [`jsonl`] holds the shared line-oriented IO.

pub mod aggregation;
pub mod annotator;
pub mod datasets;
pub mod effectsize;
pub mod jsonl;
pub mod reliability;
pub mod seed;
pub mod taxonomy;

//! Preference-head discovery and Differential Preference Steering (DPS)
//! on a compact, trainable decoder-only transformer.
//!
//! The library covers the full pipeline: a synthetic personalization
//! benchmark with known per-user preference structure, model training,
//! causal head-ablation scoring, cluster-aware routing, contrastive
//! two-pass decoding, and evaluation/efficiency reporting.

pub mod bench;
pub mod decode;
pub mod discovery;
pub mod error;
pub mod flops;
pub mod math;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod routing;
pub mod synth;
pub mod tokenizer;

pub use error::{DpsError, Result};

//! Two-stage graph-contrastive pipeline for sparse bipartite reviewer
//! recommendation: a behavior-encoding graph convolution stage, knowledge
//! feature fusion, cluster-constrained contrastive learning with pseudo
//! negative labels, an interaction-attention decoder, and a top-K ranking
//! evaluation harness.

pub mod cli;
pub mod decoder;
pub mod error;
pub mod evalkit;
pub mod graphstore;
pub mod numcore;
pub mod stage1;
pub mod stage2;
pub mod synth;
pub mod trainer;

pub use error::Error;

//! Core algorithms for non-parametric knowledge distillation at desk scale.
//!
//! This crate is `no_std` (alloc required) and contains only pure,
//! deterministic computation:
//!
//! - [`datastore`]: exact kNN key-value store over f32 vectors (squared-L2)
//! - [`teacher`]: temperature-softmax teacher distributions over retrieval
//!   results, plus the per-position neighbor cache
//! - [`distill`]: label-smoothed cross-entropy, the kNN distillation loss,
//!   its target/non-target decomposition, and analytic logit gradients
//! - [`seq2seq`]: a micro encoder-decoder transformer with hand-written
//!   backprop and exact parameter gradients
//! - [`train`]: deterministic Adam training loops for all loss modes
//! - [`corpus`]: seeded synthetic parallel-corpus generation
//! - [`bleu`]: corpus-level BLEU-4 with brevity penalty
//!
//! File formats, the pipeline, and the CLI live in the companion `dnkd-lab`
//! crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod bleu;
pub mod corpus;
pub mod datastore;
pub mod distill;
pub mod seq2seq;
pub mod teacher;
pub mod train;

pub use datastore::{Datastore, KeyRecord, NeighborSet, Origin};
pub use distill::{LossBreakdown, LossWeights};
pub use seq2seq::{ForwardTrace, LossMode, ModelConfig, Parameters};
pub use teacher::{NeighborCache, SparseDistribution, Temperature};

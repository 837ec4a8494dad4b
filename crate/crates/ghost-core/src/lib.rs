//! Desk-scale Mamba2 inference core with structured state pruning.
//!
//! The crate implements the full block forward pass (fused projection,
//! causal depthwise conv + SiLU, discretized grouped recurrence, gated
//! output path), forward-pass saliency scoring from state and readout
//! energy, magnitude/random baselines, soft weight masking with a
//! sequential layer-by-layer calibration loop, and brute-force oracle
//! checks of the scoring identities.
//!
//! `no_std` + `alloc`; all I/O, file formats and the CLI live in the
//! companion `ghost-cli` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod block;
pub mod config;
pub mod error;
pub mod init;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod scalar;
pub mod scorer;
pub mod weights;

pub use config::{MemoryFootprint, ModelConfig, ScalarWidth};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use weights::{LayerWeights, ModelWeights, SequenceBatch};

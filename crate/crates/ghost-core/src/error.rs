//! Error type shared across the core crate.

use alloc::string::String;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("{tensor}: expected {expected} elements, got {got}")]
    DimensionMismatch {
        tensor: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{tensor} contains a non-finite value at flat index {index}")]
    NonFinite { tensor: String, index: usize },

    #[error("non-finite value produced in scan at t={time}, head={head}")]
    ScanNumeric { time: usize, head: usize },

    #[error("non-finite value produced in layer {layer} at t={time}, head={head}")]
    LayerNumeric {
        layer: usize,
        time: usize,
        head: usize,
    },

    #[error("{name} = {value} violates constraint: {constraint}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },

    #[error("calibration set is empty")]
    EmptyCalibration,

    #[error("token {token} at position {position} out of range for vocab {vocab}")]
    TokenOutOfRange {
        position: usize,
        token: u32,
        vocab: usize,
    },

    #[error("state channel (group {group}, channel {channel}) out of range")]
    ChannelOutOfRange { group: usize, channel: usize },

    #[error("layer index {layer} out of range for a {layers}-layer model")]
    LayerOutOfRange { layer: usize, layers: usize },

    #[error("ragged batch: sequence {index} has length {got}, expected {expected}")]
    RaggedBatch {
        index: usize,
        got: usize,
        expected: usize,
    },

    #[error("|a_bar| = {a_bar} is not strictly inside the unit circle")]
    Unstable { a_bar: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;

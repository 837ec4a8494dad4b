//! I/O, file formats, evaluation metrics and batch-level parallelism for
//! the `ghost-core` inference and pruning engine. The `ghost` binary in
//! this crate is the command-line surface.

pub mod calib;
pub mod eval;
pub mod export;
pub mod format;
pub mod maskfile;
pub mod parallel;
pub mod report;
pub mod score;

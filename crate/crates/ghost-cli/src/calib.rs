//! Byte-level calibration and evaluation data ingestion.

use std::path::{Path, PathBuf};

use ghost_core::SequenceBatch;

#[derive(Debug, thiserror::Error)]
pub enum CalibError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: file holds {len} usable bytes, needs at least {needed} for one window")]
    TooShort {
        path: PathBuf,
        len: usize,
        needed: usize,
    },
    #[error("{path}: byte {value} at offset {offset} exceeds vocab {vocab}")]
    OutOfVocab {
        path: PathBuf,
        offset: usize,
        value: u8,
        vocab: usize,
    },
    #[error("seq_len must be at least 1")]
    ZeroLength,
    #[error("max_samples must be at least 1")]
    ZeroSamples,
    #[error(transparent)]
    Batch(#[from] ghost_core::Error),
}

/// A batch of equal-length byte sequences plus its provenance.
#[derive(Debug, Clone)]
pub struct CalibrationSet {
    pub source: PathBuf,
    pub batch: SequenceBatch,
}

impl CalibrationSet {
    pub fn sample_count(&self) -> usize {
        self.batch.batch()
    }

    pub fn seq_len(&self) -> usize {
        self.batch.seq_len()
    }
}

/// Chunk a text file's bytes into non-overlapping windows of `seq_len`
/// tokens. The final partial window is dropped; at most `max_samples`
/// windows are kept, from the front of the file.
pub fn load_text_calibration(
    path: &Path,
    seq_len: usize,
    max_samples: usize,
    vocab: usize,
) -> Result<CalibrationSet, CalibError> {
    if seq_len == 0 {
        return Err(CalibError::ZeroLength);
    }
    if max_samples == 0 {
        return Err(CalibError::ZeroSamples);
    }
    let bytes = std::fs::read(path).map_err(|source| CalibError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let windows = (bytes.len() / seq_len).min(max_samples);
    if windows == 0 {
        return Err(CalibError::TooShort {
            path: path.to_path_buf(),
            len: bytes.len(),
            needed: seq_len,
        });
    }
    let used = &bytes[..windows * seq_len];
    if vocab < 256 {
        if let Some(offset) = used.iter().position(|&b| usize::from(b) >= vocab) {
            return Err(CalibError::OutOfVocab {
                path: path.to_path_buf(),
                offset,
                value: used[offset],
                vocab,
            });
        }
    }
    let tokens: Vec<u32> = used.iter().map(|&b| u32::from(b)).collect();
    let batch = SequenceBatch::from_flat(tokens, windows, seq_len)?;
    Ok(CalibrationSet {
        source: path.to_path_buf(),
        batch,
    })
}

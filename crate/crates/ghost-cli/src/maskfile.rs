//! Mask persistence: JSON with a config fingerprint, provenance, and
//! per-layer pruned `(group, channel)` pairs plus the threshold.
//!
//! Thresholds are `null` for unscored methods (random) and at the
//! all-kept / all-pruned extremes, where the true value is infinite and
//! JSON has no encoding for it.

use std::path::Path;

use ghost_core::scorer::{MethodTag, PruneMask};
use ghost_core::ModelConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct MaskLayer {
    pub tau: Option<f64>,
    pub pruned: Vec<(usize, usize)>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct MaskFile {
    pub config_fingerprint: String,
    pub method: MethodTag,
    pub kappa: f64,
    pub seed: u64,
    pub groups: usize,
    pub state_dim: usize,
    pub layers: Vec<MaskLayer>,
}

#[derive(Debug, thiserror::Error)]
pub enum MaskError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("mask was built for a different config (fingerprint mismatch)")]
    FingerprintMismatch,
    #[error("mask shape does not match the config")]
    ShapeMismatch,
    #[error("pruned channel ({0}, {1}) out of range")]
    ChannelOutOfRange(usize, usize),
}

pub fn to_mask_file(mask: &PruneMask, config_fingerprint: String) -> MaskFile {
    let layers = (0..mask.n_layers)
        .map(|j| {
            let keep = mask.layer_keep(j);
            let pruned = (0..mask.groups)
                .flat_map(|g| {
                    (0..mask.state_dim)
                        .filter(move |&i| !keep[g * mask.state_dim + i])
                        .map(move |i| (g, i))
                })
                .collect();
            MaskLayer {
                tau: mask.tau[j].filter(|t| t.is_finite()),
                pruned,
            }
        })
        .collect();
    MaskFile {
        config_fingerprint,
        method: mask.method,
        kappa: mask.kappa,
        seed: mask.seed,
        groups: mask.groups,
        state_dim: mask.state_dim,
        layers,
    }
}

pub fn from_mask_file(
    file: &MaskFile,
    cfg: &ModelConfig,
    expected_fingerprint: &str,
) -> Result<PruneMask, MaskError> {
    if file.config_fingerprint != expected_fingerprint {
        return Err(MaskError::FingerprintMismatch);
    }
    if file.groups != cfg.groups
        || file.state_dim != cfg.state_dim
        || file.layers.len() != cfg.n_layers
    {
        return Err(MaskError::ShapeMismatch);
    }
    let mut mask = PruneMask::new(cfg, file.method, file.kappa, file.seed);
    let gn = cfg.channels_per_layer();
    for (j, layer) in file.layers.iter().enumerate() {
        for &(g, i) in &layer.pruned {
            if g >= cfg.groups || i >= cfg.state_dim {
                return Err(MaskError::ChannelOutOfRange(g, i));
            }
            mask.keep[j * gn + g * cfg.state_dim + i] = false;
        }
        mask.tau[j] = layer.tau;
    }
    Ok(mask)
}

pub fn save_mask(path: &Path, file: &MaskFile) -> Result<(), MaskError> {
    let json = serde_json::to_vec_pretty(file)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_mask(path: &Path) -> Result<MaskFile, MaskError> {
    let bytes = std::fs::read(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

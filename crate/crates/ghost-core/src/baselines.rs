//! Static-magnitude and random pruning baselines. Both feed the same
//! pooling/thresholding path as the saliency scorer so every method
//! prunes identical per-layer channel counts at a given sparsity.

// Required for f64 math in no_std builds; builds that link std (tests,
// feature-unified dev graphs) resolve the same calls inherently instead.
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::scorer::{select_by_ranking, LayerSelection, MethodTag, PruneMask};
use crate::weights::LayerWeights;
use crate::Scalar;

/// Weight-derived channel scores: depends only on the projection rows,
/// never on data.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticScoreTable {
    pub layer: usize,
    pub groups: usize,
    pub state_dim: usize,
    /// `G x N` products `||w_B row|| * ||w_C row||`.
    pub raw: Vec<f64>,
    /// `G x N` scores `sqrt(||w_B row|| * ||w_C row||)`.
    pub scores: Vec<f64>,
}

/// Static magnitude score per state channel: the geometric mean of the
/// l2 norms of its B and C projection rows.
pub fn magnitude_score<T: Scalar>(
    layer_weights: &LayerWeights<T>,
    cfg: &ModelConfig,
    layer: usize,
) -> Result<StaticScoreTable> {
    let m = cfg.model_dim;
    if layer_weights.w_in.len() != cfg.proj_rows() * m {
        return Err(Error::DimensionMismatch {
            tensor: "w_in",
            expected: cfg.proj_rows() * m,
            got: layer_weights.w_in.len(),
        });
    }
    let row_norm = |row: usize| -> f64 {
        let slice = &layer_weights.w_in[row * m..(row + 1) * m];
        slice
            .iter()
            .map(|&w| w.as_f64() * w.as_f64())
            .sum::<f64>()
            .sqrt()
    };
    let gn = cfg.channels_per_layer();
    let mut raw = Vec::with_capacity(gn);
    for g in 0..cfg.groups {
        for i in 0..cfg.state_dim {
            let b = row_norm(LayerWeights::<T>::b_row_index(cfg, g, i));
            let c = row_norm(LayerWeights::<T>::c_row_index(cfg, g, i));
            raw.push(b * c);
        }
    }
    let scores = raw.iter().map(|&v| v.sqrt()).collect();
    Ok(StaticScoreTable {
        layer,
        groups: cfg.groups,
        state_dim: cfg.state_dim,
        raw,
        scores,
    })
}

/// Magnitude selection through the shared pooling path.
pub fn magnitude_selection(table: &StaticScoreTable, kappa: f64) -> Result<LayerSelection> {
    select_by_ranking(
        &table.raw,
        &table.scores,
        table.groups * table.state_dim,
        kappa,
    )
}

/// Uniformly random mask: per layer, a random subset of exactly
/// `floor(kappa * G * N)` channels is pruned. Same seed, same mask;
/// calibration data never enters.
pub fn random_mask(cfg: &ModelConfig, kappa: f64, seed: u64) -> Result<PruneMask> {
    if !(0.0..=1.0).contains(&kappa) {
        return Err(Error::InvalidParameter {
            name: "kappa",
            value: kappa,
            constraint: "0 <= kappa <= 1",
        });
    }
    let gn = cfg.channels_per_layer();
    let prune = (kappa * gn as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = PruneMask::new(cfg, MethodTag::Random, kappa, seed);
    for layer in 0..cfg.n_layers {
        // Partial Fisher-Yates: the first `prune` entries are a uniform
        // subset without replacement.
        let mut idx: Vec<usize> = (0..gn).collect();
        for k in 0..prune {
            let j = rng.gen_range(k..gn);
            idx.swap(k, j);
        }
        let mut keep = alloc::vec![true; gn];
        for &i in idx.iter().take(prune) {
            keep[i] = false;
        }
        mask.set_layer(
            layer,
            &LayerSelection {
                keep,
                tau: f64::NAN,
            },
            None,
        );
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn cfg() -> ModelConfig {
        ModelConfig {
            model_dim: 2,
            expand: 2,
            heads: 2,
            head_dim: 2,
            groups: 2,
            state_dim: 2,
            n_layers: 3,
            conv_width: 2,
            vocab: 5,
            eps: 1e-6,
        }
    }

    #[test]
    fn magnitude_is_the_geometric_mean_of_row_norms() {
        let cfg = cfg();
        let mut layer = LayerWeights::<f64>::zeros(&cfg);
        // (g=0, i=0): ||B row|| = 2, ||C row|| = 3 -> score sqrt(6).
        let b_row = LayerWeights::<f64>::b_row_index(&cfg, 0, 0);
        let c_row = LayerWeights::<f64>::c_row_index(&cfg, 0, 0);
        layer.w_in[b_row * 2] = 2.0;
        layer.w_in[c_row * 2 + 1] = 3.0;
        let table = magnitude_score(&layer, &cfg, 0).unwrap();
        assert!((table.raw[0] - 6.0).abs() < 1e-15);
        assert!((table.scores[0] - 6.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_c_row_zeroes_the_score() {
        let cfg = cfg();
        let mut layer = LayerWeights::<f64>::zeros(&cfg);
        let b_row = LayerWeights::<f64>::b_row_index(&cfg, 1, 1);
        layer.w_in[b_row * 2] = 17.0; // C row stays zero
        let table = magnitude_score(&layer, &cfg, 0).unwrap();
        assert_eq!(table.scores[3], 0.0);
    }

    #[test]
    fn positive_scaling_preserves_the_ordering() {
        let cfg = cfg();
        let mut layer = LayerWeights::<f64>::zeros(&cfg);
        for (i, w) in layer.w_in.iter_mut().enumerate() {
            *w = ((i * 41 + 13) % 29) as f64 / 14.0 - 1.0;
        }
        let base = magnitude_score(&layer, &cfg, 0).unwrap();
        let mut scaled = layer.clone();
        for w in scaled.w_in.iter_mut() {
            *w *= 2.5;
        }
        let scaled = magnitude_score(&scaled, &cfg, 0).unwrap();
        for (s, b) in scaled.scores.iter().zip(base.scores.iter()) {
            assert!((s - 2.5 * b).abs() < 1e-12);
        }
        let argsort = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
            idx
        };
        assert_eq!(argsort(&base.scores), argsort(&scaled.scores));
    }

    #[test]
    fn random_mask_is_seed_deterministic() {
        let cfg = cfg();
        let a = random_mask(&cfg, 0.5, 42).unwrap();
        let b = random_mask(&cfg, 0.5, 42).unwrap();
        assert_eq!(a, b);
        let c = random_mask(&cfg, 0.5, 7).unwrap();
        assert_ne!(a.keep, c.keep);
    }

    #[test]
    fn random_mask_extremes() {
        let cfg = cfg();
        let none = random_mask(&cfg, 0.0, 1).unwrap();
        assert!(none.keep.iter().all(|&k| k));
        let all = random_mask(&cfg, 1.0, 1).unwrap();
        assert!(all.keep.iter().all(|&k| !k));
    }

    #[test]
    fn random_mask_counts_match_floor() {
        let cfg = cfg();
        for kappa in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let mask = random_mask(&cfg, kappa, 3).unwrap();
            mask.validate_counts().unwrap();
            let expect = (kappa * 4.0).floor() as usize;
            assert_eq!(mask.pruned_per_layer(), vec![expect; 3]);
        }
    }
}

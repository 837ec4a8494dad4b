//! Seeded random initialization for desk-scale models and token data.
//!
//! Matrices are Gaussian with scale `1/sqrt(fan_in)`; decay exponents are
//! `ln(U[1, 16])`; feedthrough and norm scales start at one; timescale
//! biases are set so the post-softplus step size lands in `[0.01, 0.1]`.
//! Weights are materialized in `f32`, the storage precision of the model
//! file format; widen with [`ModelWeights::convert`] for oracle-mode runs.

// Required for f64 math in no_std builds; builds that link std (tests,
// feature-unified dev graphs) resolve the same calls inherently instead.
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::ModelConfig;
use crate::error::Result;
use crate::scalar::softplus_inverse;
use crate::weights::{LayerWeights, ModelWeights, SequenceBatch};

fn gaussian_vec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f32> {
    (0..len)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            (g * scale) as f32
        })
        .collect()
}

fn random_layer(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> LayerWeights<f32> {
    let m = cfg.model_dim;
    let r = cfg.expanded_dim();

    let w_in = gaussian_vec(rng, cfg.proj_rows() * m, 1.0 / (m as f64).sqrt());
    let mut b_in = gaussian_vec(rng, cfg.proj_rows(), 0.1);
    // Timescale bias: softplus(dt slice of b_in) lands in [0.01, 0.1],
    // sampled log-uniformly per head.
    for h in 0..cfg.heads {
        let dt = rng.gen_range(0.01f64.ln()..0.1f64.ln()).exp();
        b_in[cfg.dt_offset() + h] = softplus_inverse(dt) as f32;
    }

    LayerWeights {
        norm_gamma: vec![1.0; m],
        w_in,
        b_in,
        conv_filters: gaussian_vec(
            rng,
            cfg.conv_channels() * cfg.conv_width,
            1.0 / (cfg.conv_width as f64).sqrt(),
        ),
        conv_bias: gaussian_vec(rng, cfg.conv_channels(), 0.1),
        a_log: (0..cfg.heads)
            .map(|_| (rng.gen_range(1.0f64..16.0)).ln() as f32)
            .collect(),
        d: vec![1.0; cfg.heads],
        out_norm_gamma: vec![1.0; r],
        w_out: gaussian_vec(rng, m * r, 1.0 / (r as f64).sqrt()),
        b_out: gaussian_vec(rng, m, 0.1),
    }
}

/// Deterministic random model. Equal seeds produce bit-equal weights.
pub fn random_model(cfg: &ModelConfig, seed: u64) -> Result<ModelWeights<f32>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = ModelWeights {
        config: *cfg,
        embedding: gaussian_vec(
            &mut rng,
            cfg.vocab * cfg.model_dim,
            1.0 / (cfg.model_dim as f64).sqrt(),
        ),
        layers: (0..cfg.n_layers)
            .map(|_| random_layer(&mut rng, cfg))
            .collect(),
        final_norm_gamma: vec![1.0; cfg.model_dim],
    };
    weights.validate()?;
    Ok(weights)
}

/// Deterministic uniformly random token batch in `[0, vocab)`.
pub fn random_tokens(
    vocab: usize,
    batch: usize,
    seq_len: usize,
    seed: u64,
) -> Result<SequenceBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tokens: Vec<u32> = (0..batch * seq_len)
        .map(|_| rng.gen_range(0..vocab as u32))
        .collect();
    SequenceBatch::from_flat(tokens, batch, seq_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::softplus;

    #[test]
    fn same_seed_same_model() {
        let cfg = ModelConfig::desk_default();
        let a = random_model(&cfg, 42).unwrap();
        let b = random_model(&cfg, 42).unwrap();
        assert_eq!(a, b);
        let c = random_model(&cfg, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn timescales_land_in_target_band() {
        let cfg = ModelConfig::desk_default();
        let model = random_model(&cfg, 1).unwrap();
        for layer in &model.layers {
            for h in 0..cfg.heads {
                let dt = softplus(f64::from(layer.b_in[cfg.dt_offset() + h]));
                assert!((0.009..=0.11).contains(&dt), "dt = {dt}");
            }
        }
    }

    #[test]
    fn decay_exponents_are_stable() {
        let cfg = ModelConfig::desk_default();
        let model = random_model(&cfg, 2).unwrap();
        for layer in &model.layers {
            for &a_log in &layer.a_log {
                let a = -f64::from(a_log).exp();
                assert!(a < 0.0);
                assert!((-16.0..=-1.0).contains(&a), "decay rate {a}");
            }
        }
    }

    #[test]
    fn random_tokens_are_deterministic_and_in_range() {
        let a = random_tokens(256, 3, 8, 9).unwrap();
        let b = random_tokens(256, 3, 8, 9).unwrap();
        assert_eq!(a, b);
        a.validate_tokens(256).unwrap();
    }
}

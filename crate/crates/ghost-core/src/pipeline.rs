//! Soft weight masking and the sequential layer-by-layer calibration loop.
//!
//! Masking zeroes the B/C projection rows, their biases, and the matching
//! conv filters and biases of pruned channels, so a pruned channel's
//! state is exactly zero from a zero initial state. Shapes never change.
//!
//! The sequential loop runs exactly two forward evaluations of each layer
//! over the calibration set: one to score it, one (after masking) to
//! produce the next layer's inputs, so downstream scoring sees the
//! already-sparsified activations.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::baselines::{magnitude_score, magnitude_selection, random_mask};
use crate::block::{block_forward_seq, BlockOptions};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::embed_sequence;
use crate::scalar::Scalar;
use crate::scorer::{
    pool_and_threshold, LayerSelection, MethodTag, PruneMask, SaliencyAccumulator,
};
use crate::weights::{LayerWeights, ModelWeights, SequenceBatch};

/// Zero the weights feeding and reading the pruned state channels of one
/// layer: the B and C rows of the input projection, their bias entries,
/// and the matching conv filters and conv biases in both the B and C
/// channel blocks. Nothing else changes.
pub fn apply_mask<T: Scalar>(
    layer: &LayerWeights<T>,
    cfg: &ModelConfig,
    keep: &[bool],
) -> Result<LayerWeights<T>> {
    let gn = cfg.channels_per_layer();
    if keep.len() != gn {
        return Err(Error::DimensionMismatch {
            tensor: "layer mask",
            expected: gn,
            got: keep.len(),
        });
    }
    let mut out = layer.clone();
    let m = cfg.model_dim;
    let w = cfg.conv_width;
    for g in 0..cfg.groups {
        for i in 0..cfg.state_dim {
            if keep[g * cfg.state_dim + i] {
                continue;
            }
            let flat = g * cfg.state_dim + i;
            for row in [
                LayerWeights::<T>::b_row_index(cfg, g, i),
                LayerWeights::<T>::c_row_index(cfg, g, i),
            ] {
                out.w_in[row * m..(row + 1) * m].fill(T::zero());
                out.b_in[row] = T::zero();
            }
            for channel in [cfg.conv_b_offset() + flat, cfg.conv_c_offset() + flat] {
                out.conv_filters[channel * w..(channel + 1) * w].fill(T::zero());
                out.conv_bias[channel] = T::zero();
            }
        }
    }
    Ok(out)
}

/// Apply a whole-model mask layer by layer.
pub fn apply_mask_model<T: Scalar>(
    weights: &ModelWeights<T>,
    mask: &PruneMask,
) -> Result<ModelWeights<T>> {
    if mask.n_layers != weights.config.n_layers
        || mask.groups != weights.config.groups
        || mask.state_dim != weights.config.state_dim
    {
        return Err(Error::DimensionMismatch {
            tensor: "prune mask",
            expected: weights.config.n_layers,
            got: mask.n_layers,
        });
    }
    let mut out = weights.clone();
    for (j, layer) in out.layers.iter_mut().enumerate() {
        *layer = apply_mask(layer, &weights.config, mask.layer_keep(j))?;
    }
    Ok(out)
}

/// Pruned fraction of state channels: `1 - kept / (layers * G * N)`.
pub fn sparsity(mask: &PruneMask) -> f64 {
    let total = mask.keep.len();
    if total == 0 {
        return 0.0;
    }
    let kept = mask.keep.iter().filter(|&&k| k).count();
    1.0 - kept as f64 / total as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneSettings {
    pub method: MethodTag,
    pub kappa: f64,
    pub seed: u64,
}

impl PruneSettings {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(Error::InvalidParameter {
                name: "kappa",
                value: self.kappa,
                constraint: "0 <= kappa <= 1",
            });
        }
        Ok(())
    }
}

/// Aggregate wall-clock per pipeline phase, in nanoseconds as reported by
/// the caller-supplied clock.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTimings {
    /// Scoring pass: forward with capture plus accumulation.
    pub scoring_nanos: u64,
    /// Selection and weight masking.
    pub selection_nanos: u64,
    /// Activation update pass through the masked layer.
    pub update_nanos: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    /// Threshold separating pruned from kept, in score units.
    pub tau: Option<f64>,
    pub retained_per_group: Vec<usize>,
    pub pruned_channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub method: MethodTag,
    pub kappa: f64,
    pub seed: u64,
    pub layers: Vec<LayerReport>,
    pub achieved_sparsity: f64,
    pub timings: PhaseTimings,
    /// Forward evaluations of each layer over the calibration set;
    /// always exactly two per layer.
    pub forward_passes_per_layer: Vec<u32>,
}

/// Sequential layer-wise pruning.
///
/// For each layer j: (a) forward the current calibration activations
/// through the dense layer, capturing transients when the method needs
/// them; (b) score and select channels; (c) mask the layer's weights;
/// (d) forward the same activations through the masked layer to produce
/// layer j+1 inputs. `clock` supplies monotonic nanoseconds for the phase
/// timings; pass `|| 0` when timing is irrelevant.
pub fn sequential_prune<T: Scalar>(
    weights: &ModelWeights<T>,
    calib: &SequenceBatch,
    settings: &PruneSettings,
    clock: &mut dyn FnMut() -> u64,
) -> Result<(ModelWeights<T>, PruneMask, PruneReport)> {
    settings.validate()?;
    let cfg = weights.config;
    if calib.batch() == 0 {
        return Err(Error::EmptyCalibration);
    }
    calib.validate_tokens(cfg.vocab)?;

    // Random masks are data-independent and fixed up front.
    let preset_mask = match settings.method {
        MethodTag::Random => Some(random_mask(&cfg, settings.kappa, settings.seed)?),
        _ => None,
    };

    let mut activations: Vec<Vec<T>> = calib
        .sequences()
        .map(|tokens| embed_sequence(weights, tokens))
        .collect::<Result<_>>()?;

    let mut pruned = weights.clone();
    let mut mask = PruneMask::new(&cfg, settings.method, settings.kappa, settings.seed);
    let mut layer_reports = Vec::with_capacity(cfg.n_layers);
    let mut forward_passes: Vec<u32> = Vec::with_capacity(cfg.n_layers);
    let mut timings = PhaseTimings::default();

    let needs_capture = settings.method.scoring_mode().is_some();
    let seq_len = calib.seq_len();

    for j in 0..cfg.n_layers {
        let layer_error = |e: Error| match e {
            Error::ScanNumeric { time, head } => Error::LayerNumeric {
                layer: j,
                time,
                head,
            },
            other => other,
        };

        // (a) scoring pass over the dense layer.
        let t0 = clock();
        let mut acc = SaliencyAccumulator::new(&cfg);
        for acts in &activations {
            let run = block_forward_seq(
                acts,
                seq_len,
                &pruned.layers[j],
                &cfg,
                &BlockOptions {
                    capture: needs_capture,
                    ..BlockOptions::default()
                },
            )
            .map_err(layer_error)?;
            if let Some(capture) = run.capture {
                acc.accumulate_capture(&capture)?;
            }
        }
        let mut layer_passes = 1u32;
        let t1 = clock();

        // (b) select channels, (c) mask the layer.
        let (selection, tau) = match settings.method {
            MethodTag::Ghost | MethodTag::GhostP | MethodTag::GhostQ => {
                let mode = settings.method.scoring_mode().expect("data-driven method");
                let table = acc.finalize(j, mode)?;
                let selection = pool_and_threshold(&table, settings.kappa)?;
                let tau = selection.tau;
                (selection, Some(tau))
            }
            MethodTag::Magnitude => {
                let table = magnitude_score(&pruned.layers[j], &cfg, j)?;
                let selection = magnitude_selection(&table, settings.kappa)?;
                let tau = selection.tau;
                (selection, Some(tau))
            }
            MethodTag::Random => {
                let preset = preset_mask.as_ref().expect("preset random mask");
                (
                    LayerSelection {
                        keep: preset.layer_keep(j).to_vec(),
                        tau: f64::NAN,
                    },
                    None,
                )
            }
        };
        mask.set_layer(j, &selection, tau);
        pruned.layers[j] = apply_mask(&pruned.layers[j], &cfg, &selection.keep)?;
        let t2 = clock();

        // (d) update pass through the masked layer.
        for acts in activations.iter_mut() {
            let run = block_forward_seq(
                acts,
                seq_len,
                &pruned.layers[j],
                &cfg,
                &BlockOptions::default(),
            )
            .map_err(layer_error)?;
            *acts = run.output;
        }
        layer_passes += 1;
        let t3 = clock();

        timings.scoring_nanos += t1.saturating_sub(t0);
        timings.selection_nanos += t2.saturating_sub(t1);
        timings.update_nanos += t3.saturating_sub(t2);

        forward_passes.push(layer_passes);
        layer_reports.push(LayerReport {
            tau,
            retained_per_group: selection.retained_per_group(cfg.state_dim),
            pruned_channels: selection.pruned_count(),
        });
    }

    mask.validate_counts()?;
    let report = PruneReport {
        method: settings.method,
        kappa: settings.kappa,
        seed: settings.seed,
        layers: layer_reports,
        achieved_sparsity: sparsity(&mask),
        timings,
        forward_passes_per_layer: forward_passes,
    };
    Ok((pruned, mask, report))
}

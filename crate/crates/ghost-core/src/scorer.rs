//! Saliency accumulation and inter-group thresholded mask construction.
//!
//! During a scoring pass each step contributes, per group `g` and state
//! channel `i`, the product of squared hidden-state energy (summed over
//! the group's heads and head channels) and squared readout energy.
//! Storage is `O(G * N)`: three running sum vectors plus two counters, no
//! per-step or per-sequence buffers. Sums accumulate in `f64` regardless
//! of the model compute precision.

// Required for f64 math in no_std builds; builds that link std (tests,
// feature-unified dev graphs) resolve the same calls inherently instead.
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use serde::{Deserialize, Serialize};

use crate::block::{block_forward_seq, BlockOptions, TransientCapture};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::embed_sequence;
use crate::scalar::Scalar;
use crate::weights::ModelWeights;

/// Which statistic ranks channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoringMode {
    /// Product of state and readout energy (the default saliency).
    Product,
    /// State energy alone (controllability ablation).
    POnly,
    /// Readout energy alone (observability ablation).
    QOnly,
}

/// Pruning method identifier carried by masks, reports and CSV exports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodTag {
    Ghost,
    GhostP,
    GhostQ,
    Magnitude,
    Random,
}

impl MethodTag {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodTag::Ghost => "ghost",
            MethodTag::GhostP => "ghost-p",
            MethodTag::GhostQ => "ghost-q",
            MethodTag::Magnitude => "magnitude",
            MethodTag::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ghost" => Some(MethodTag::Ghost),
            "ghost-p" => Some(MethodTag::GhostP),
            "ghost-q" => Some(MethodTag::GhostQ),
            "magnitude" => Some(MethodTag::Magnitude),
            "random" => Some(MethodTag::Random),
            _ => None,
        }
    }

    /// The saliency statistic this method ranks by, if it is data-driven.
    pub fn scoring_mode(self) -> Option<ScoringMode> {
        match self {
            MethodTag::Ghost => Some(ScoringMode::Product),
            MethodTag::GhostP => Some(ScoringMode::POnly),
            MethodTag::GhostQ => Some(ScoringMode::QOnly),
            MethodTag::Magnitude | MethodTag::Random => None,
        }
    }
}

impl core::fmt::Display for MethodTag {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Running per-channel sums over calibration data.
///
/// Mergeable: parallel shards each own an accumulator and are merged in a
/// fixed shard order for reproducibility.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyAccumulator {
    groups: usize,
    state_dim: usize,
    heads: usize,
    head_dim: usize,
    sum_s: Vec<f64>, // G x N, sum of H^2 * C'^2
    sum_p: Vec<f64>, // G x N, sum of H^2
    sum_q: Vec<f64>, // G x N, sum of C'^2
    samples: u64,
    steps: u64,
}

impl SaliencyAccumulator {
    pub fn new(cfg: &ModelConfig) -> Self {
        let gn = cfg.channels_per_layer();
        SaliencyAccumulator {
            groups: cfg.groups,
            state_dim: cfg.state_dim,
            heads: cfg.heads,
            head_dim: cfg.head_dim,
            sum_s: vec![0.0; gn],
            sum_p: vec![0.0; gn],
            sum_q: vec![0.0; gn],
            samples: 0,
            steps: 0,
        }
    }

    /// Fold in one step's transients: `hidden_t` is `H x P x N`,
    /// `c_prime_t` is `G x N`.
    pub fn accumulate_step<T: Scalar>(&mut self, hidden_t: &[T], c_prime_t: &[T]) -> Result<()> {
        let hpn = self.heads * self.head_dim * self.state_dim;
        let gn = self.groups * self.state_dim;
        if hidden_t.len() != hpn {
            return Err(Error::DimensionMismatch {
                tensor: "hidden_t",
                expected: hpn,
                got: hidden_t.len(),
            });
        }
        if c_prime_t.len() != gn {
            return Err(Error::DimensionMismatch {
                tensor: "c_prime_t",
                expected: gn,
                got: c_prime_t.len(),
            });
        }
        let heads_per_group = self.heads / self.groups;
        for g in 0..self.groups {
            for i in 0..self.state_dim {
                let c = c_prime_t[g * self.state_dim + i].as_f64();
                if !c.is_finite() {
                    return Err(Error::NonFinite {
                        tensor: String::from("c_prime_t"),
                        index: g * self.state_dim + i,
                    });
                }
                let q = c * c;
                let mut p = 0.0f64;
                for k in 0..heads_per_group {
                    let head = g * heads_per_group + k;
                    for pch in 0..self.head_dim {
                        let idx = (head * self.head_dim + pch) * self.state_dim + i;
                        let h = hidden_t[idx].as_f64();
                        if !h.is_finite() {
                            return Err(Error::NonFinite {
                                tensor: String::from("hidden_t"),
                                index: idx,
                            });
                        }
                        p += h * h;
                    }
                }
                let flat = g * self.state_dim + i;
                self.sum_s[flat] += p * q;
                self.sum_p[flat] += p;
                self.sum_q[flat] += q;
            }
        }
        self.steps += 1;
        Ok(())
    }

    /// Fold in a whole captured sequence and count it as one sample.
    pub fn accumulate_capture<T: Scalar>(&mut self, capture: &TransientCapture<T>) -> Result<()> {
        for t in 0..capture.seq_len {
            self.accumulate_step(capture.hidden_at(t), capture.c_prime_at(t))?;
        }
        self.samples += 1;
        Ok(())
    }

    /// Elementwise merge of two shards' sums.
    pub fn merge(&mut self, other: &SaliencyAccumulator) -> Result<()> {
        if self.groups != other.groups
            || self.state_dim != other.state_dim
            || self.heads != other.heads
            || self.head_dim != other.head_dim
        {
            return Err(Error::DimensionMismatch {
                tensor: "accumulator merge",
                expected: self.sum_s.len(),
                got: other.sum_s.len(),
            });
        }
        for (a, b) in self.sum_s.iter_mut().zip(other.sum_s.iter()) {
            *a += *b;
        }
        for (a, b) in self.sum_p.iter_mut().zip(other.sum_p.iter()) {
            *a += *b;
        }
        for (a, b) in self.sum_q.iter_mut().zip(other.sum_q.iter()) {
            *a += *b;
        }
        self.samples += other.samples;
        self.steps += other.steps;
        Ok(())
    }

    /// Normalization count `Z = samples * K * P`.
    pub fn normalizer(&self) -> u64 {
        self.samples * (self.heads / self.groups) as u64 * self.head_dim as u64
    }

    pub fn samples_seen(&self) -> u64 {
        self.samples
    }

    pub fn steps_seen(&self) -> u64 {
        self.steps
    }

    /// Live statistic storage, in scalars (excludes the two counters).
    pub fn tracked_scalars(&self) -> usize {
        self.sum_s.len() + self.sum_p.len() + self.sum_q.len()
    }

    pub fn raw_sums(&self, mode: ScoringMode) -> &[f64] {
        match mode {
            ScoringMode::Product => &self.sum_s,
            ScoringMode::POnly => &self.sum_p,
            ScoringMode::QOnly => &self.sum_q,
        }
    }

    /// Normalized scores plus the raw sums that rank identically.
    ///
    /// Product and P-only scores are `sqrt(sum / Z)`; Q-only has no
    /// head/channel multiplicity so it normalizes by steps seen instead.
    pub fn finalize(&self, layer: usize, mode: ScoringMode) -> Result<SaliencyTable> {
        if self.samples == 0 {
            return Err(Error::EmptyCalibration);
        }
        let raw = self.raw_sums(mode).to_vec();
        let denom = match mode {
            ScoringMode::Product | ScoringMode::POnly => self.normalizer() as f64,
            ScoringMode::QOnly => self.steps as f64,
        };
        let scores: Vec<f64> = raw.iter().map(|&s| (s / denom).sqrt()).collect();
        Ok(SaliencyTable {
            layer,
            groups: self.groups,
            state_dim: self.state_dim,
            mode,
            raw,
            scores,
        })
    }
}

/// Per-layer, per-channel saliency: raw sums plus normalized scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyTable {
    pub layer: usize,
    pub groups: usize,
    pub state_dim: usize,
    pub mode: ScoringMode,
    /// `G x N` raw accumulated sums; ranking uses these.
    pub raw: Vec<f64>,
    /// `G x N` normalized scores, `sqrt(raw / Z)`.
    pub scores: Vec<f64>,
}

/// Keep/prune decisions for one layer plus the threshold that separates
/// them (in normalized-score units).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSelection {
    /// `G x N`; `false` = pruned.
    pub keep: Vec<bool>,
    /// Score of the lowest kept channel; `-inf` when nothing is pruned,
    /// `+inf` when everything is.
    pub tau: f64,
}

impl LayerSelection {
    pub fn pruned_count(&self) -> usize {
        self.keep.iter().filter(|&&k| !k).count()
    }

    pub fn retained_per_group(&self, state_dim: usize) -> Vec<usize> {
        self.keep
            .chunks(state_dim)
            .map(|chunk| chunk.iter().filter(|&&k| k).count())
            .collect()
    }
}

/// Number of channels pruned per layer at sparsity `kappa`.
pub fn pruned_channels(cfg: &ModelConfig, kappa: f64) -> usize {
    (kappa * cfg.channels_per_layer() as f64).floor() as usize
}

/// Keep mask pruning exactly `prune` channels with the lowest ranking
/// values; ties break by ascending flat index, i.e. ascending `(g, i)`.
pub(crate) fn keep_mask_pruning_lowest(ranking: &[f64], prune: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..ranking.len()).collect();
    order.sort_unstable_by(|&a, &b| ranking[a].total_cmp(&ranking[b]).then_with(|| a.cmp(&b)));
    let mut keep = vec![true; ranking.len()];
    for &idx in order.iter().take(prune) {
        keep[idx] = false;
    }
    keep
}

/// Pool all `G x N` scores of one layer and prune exactly
/// `floor(kappa * G * N)` of the lowest. Groups are ranked jointly, so
/// retained counts per group may differ.
pub fn pool_and_threshold(table: &SaliencyTable, kappa: f64) -> Result<LayerSelection> {
    select_by_ranking(
        &table.raw,
        &table.scores,
        table.groups * table.state_dim,
        kappa,
    )
}

pub(crate) fn select_by_ranking(
    ranking: &[f64],
    scores: &[f64],
    channels: usize,
    kappa: f64,
) -> Result<LayerSelection> {
    if !(0.0..=1.0).contains(&kappa) {
        return Err(Error::InvalidParameter {
            name: "kappa",
            value: kappa,
            constraint: "0 <= kappa <= 1",
        });
    }
    if ranking.len() != channels || scores.len() != channels {
        return Err(Error::DimensionMismatch {
            tensor: "layer scores",
            expected: channels,
            got: ranking.len(),
        });
    }
    let prune = (kappa * channels as f64).floor() as usize;
    let keep = keep_mask_pruning_lowest(ranking, prune);
    let tau = if prune == 0 {
        f64::NEG_INFINITY
    } else if prune == channels {
        f64::INFINITY
    } else {
        let mut order: Vec<usize> = (0..channels).collect();
        order.sort_unstable_by(|&a, &b| ranking[a].total_cmp(&ranking[b]).then_with(|| a.cmp(&b)));
        scores[order[prune]]
    };
    Ok(LayerSelection { keep, tau })
}

/// Whole-model keep/prune decisions plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneMask {
    pub n_layers: usize,
    pub groups: usize,
    pub state_dim: usize,
    pub method: MethodTag,
    pub kappa: f64,
    pub seed: u64,
    /// `layers x G x N`; `false` = pruned.
    pub keep: Vec<bool>,
    /// Per-layer threshold in score units; `None` for methods without
    /// scores (random).
    pub tau: Vec<Option<f64>>,
}

impl PruneMask {
    pub fn new(cfg: &ModelConfig, method: MethodTag, kappa: f64, seed: u64) -> Self {
        PruneMask {
            n_layers: cfg.n_layers,
            groups: cfg.groups,
            state_dim: cfg.state_dim,
            method,
            kappa,
            seed,
            keep: vec![true; cfg.n_layers * cfg.channels_per_layer()],
            tau: vec![None; cfg.n_layers],
        }
    }

    #[inline]
    pub fn channels_per_layer(&self) -> usize {
        self.groups * self.state_dim
    }

    pub fn layer_keep(&self, layer: usize) -> &[bool] {
        let gn = self.channels_per_layer();
        &self.keep[layer * gn..(layer + 1) * gn]
    }

    pub fn set_layer(&mut self, layer: usize, selection: &LayerSelection, tau: Option<f64>) {
        let gn = self.channels_per_layer();
        self.keep[layer * gn..(layer + 1) * gn].copy_from_slice(&selection.keep);
        self.tau[layer] = tau;
    }

    pub fn is_kept(&self, layer: usize, group: usize, channel: usize) -> bool {
        self.layer_keep(layer)[group * self.state_dim + channel]
    }

    pub fn pruned_per_layer(&self) -> Vec<usize> {
        (0..self.n_layers)
            .map(|j| self.layer_keep(j).iter().filter(|&&k| !k).count())
            .collect()
    }

    /// Checks the exact-count invariant: every layer prunes
    /// `floor(kappa * G * N)` channels.
    pub fn validate_counts(&self) -> Result<()> {
        let expect = (self.kappa * self.channels_per_layer() as f64).floor() as usize;
        for count in self.pruned_per_layer() {
            if count != expect {
                return Err(Error::InvalidParameter {
                    name: "prune mask",
                    value: count as f64,
                    constraint: "every layer prunes exactly floor(kappa * G * N) channels",
                });
            }
        }
        Ok(())
    }
}

/// Forward one sequence through every layer of the model, folding each
/// layer's transients into its accumulator. `accs` must hold one
/// accumulator per layer. This is the single-pass scoring driver used for
/// score exports; the pruning pipeline instead scores layer by layer with
/// masked activation updates.
pub fn accumulate_sequence<T: Scalar>(
    weights: &ModelWeights<T>,
    tokens: &[u32],
    accs: &mut [SaliencyAccumulator],
) -> Result<()> {
    let cfg = &weights.config;
    if accs.len() != cfg.n_layers {
        return Err(Error::DimensionMismatch {
            tensor: "accumulators",
            expected: cfg.n_layers,
            got: accs.len(),
        });
    }
    let mut acts = embed_sequence(weights, tokens)?;
    for (j, layer) in weights.layers.iter().enumerate() {
        let run = block_forward_seq(
            &acts,
            tokens.len(),
            layer,
            cfg,
            &BlockOptions {
                capture: true,
                ..BlockOptions::default()
            },
        )?;
        accs[j].accumulate_capture(run.capture.as_ref().expect("capture requested"))?;
        acts = run.output;
    }
    Ok(())
}

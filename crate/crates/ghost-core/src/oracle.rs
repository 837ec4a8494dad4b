//! Independent brute-force and analytic checks of the scoring machinery.
//!
//! The central check differences two forward runs of a layer's state path
//! (dense versus one state channel forced to zero) and compares the
//! measured cumulative squared error against the prediction from the
//! accumulated saliency sums. Everything here runs in `f64`.

// Required for f64 math in no_std builds; builds that link std (tests,
// feature-unified dev graphs) resolve the same calls inherently instead.
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::block::{
    block_forward_seq, block_state_outputs, ssm_scan, BlockOptions, ScanOptions, ScanParams,
};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::{activations_before_layer, embed_sequence, unembed};
use crate::scalar::softplus_inverse;
use crate::scorer::SaliencyAccumulator;
use crate::weights::{LayerWeights, ModelWeights, SequenceBatch};

/// Measured versus predicted cumulative channel loss for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelLossRow {
    pub group: usize,
    pub channel: usize,
    /// Brute-force differenced loss, summed over the calibration set.
    pub measured: f64,
    /// `Z * S^2`, i.e. the raw accumulated saliency sum.
    pub predicted: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelLossTable {
    pub layer: usize,
    pub rows: Vec<ChannelLossRow>,
    pub max_rel_err: f64,
}

fn relative_error(measured: f64, predicted: f64) -> f64 {
    let scale = measured.abs().max(predicted.abs());
    if scale == 0.0 {
        0.0
    } else {
        (measured - predicted).abs() / scale
    }
}

/// Cumulative squared state-output error from pruning one channel,
/// measured by literally zeroing the state column and readout entry and
/// differencing the layer's `H C'^T` output against the dense run, summed
/// over every calibration sequence, step, group head and head channel.
///
/// Upstream activations come from the dense model. The feedthrough term
/// is excluded; it cancels in the difference regardless.
pub fn bruteforce_channel_loss(
    weights: &ModelWeights<f64>,
    layer: usize,
    group: usize,
    channel: usize,
    calib: &SequenceBatch,
) -> Result<f64> {
    let cfg = &weights.config;
    if layer >= cfg.n_layers {
        return Err(Error::LayerOutOfRange {
            layer,
            layers: cfg.n_layers,
        });
    }
    if group >= cfg.groups || channel >= cfg.state_dim {
        return Err(Error::ChannelOutOfRange { group, channel });
    }
    let mut loss = 0.0f64;
    for tokens in calib.sequences() {
        let input = activations_before_layer(weights, tokens, layer)?;
        let dense = block_state_outputs(&input, tokens.len(), &weights.layers[layer], cfg, None)?;
        let zeroed = block_state_outputs(
            &input,
            tokens.len(),
            &weights.layers[layer],
            cfg,
            Some((group, channel)),
        )?;
        loss += group_output_sq_diff(cfg, &dense, &zeroed, group, tokens.len());
    }
    Ok(loss)
}

/// Sum of squared differences over the heads of one group.
fn group_output_sq_diff(
    cfg: &ModelConfig,
    dense: &[f64],
    zeroed: &[f64],
    group: usize,
    seq_len: usize,
) -> f64 {
    let heads_per_group = cfg.heads_per_group();
    let p = cfg.head_dim;
    let mut acc = 0.0f64;
    for t in 0..seq_len {
        for k in 0..heads_per_group {
            let head = group * heads_per_group + k;
            let base = (t * cfg.heads + head) * p;
            for i in 0..p {
                let d = dense[base + i] - zeroed[base + i];
                acc += d * d;
            }
        }
    }
    acc
}

/// Brute-force losses for every channel of one layer, against the
/// predictions of a saliency accumulator run over the same inputs.
/// Shares the dense run and upstream activations across channels.
pub fn channel_loss_table(
    weights: &ModelWeights<f64>,
    layer: usize,
    calib: &SequenceBatch,
) -> Result<ChannelLossTable> {
    let cfg = &weights.config;
    if layer >= cfg.n_layers {
        return Err(Error::LayerOutOfRange {
            layer,
            layers: cfg.n_layers,
        });
    }
    let seq_len = calib.seq_len();
    let layer_weights = &weights.layers[layer];

    // Upstream activations and dense outputs once per sequence.
    let mut inputs = Vec::with_capacity(calib.batch());
    let mut dense_runs = Vec::with_capacity(calib.batch());
    let mut acc = SaliencyAccumulator::new(cfg);
    for tokens in calib.sequences() {
        let input = activations_before_layer(weights, tokens, layer)?;
        dense_runs.push(block_state_outputs(
            &input,
            seq_len,
            layer_weights,
            cfg,
            None,
        )?);
        let run = block_forward_seq(
            &input,
            seq_len,
            layer_weights,
            cfg,
            &BlockOptions {
                capture: true,
                ..BlockOptions::default()
            },
        )?;
        acc.accumulate_capture(run.capture.as_ref().expect("capture requested"))?;
        inputs.push(input);
    }
    let predicted = acc.raw_sums(crate::scorer::ScoringMode::Product);

    let mut rows = Vec::with_capacity(cfg.channels_per_layer());
    let mut max_rel_err = 0.0f64;
    for group in 0..cfg.groups {
        for channel in 0..cfg.state_dim {
            let mut measured = 0.0f64;
            for (input, dense) in inputs.iter().zip(dense_runs.iter()) {
                let zeroed = block_state_outputs(
                    input,
                    seq_len,
                    layer_weights,
                    cfg,
                    Some((group, channel)),
                )?;
                measured += group_output_sq_diff(cfg, dense, &zeroed, group, seq_len);
            }
            let predicted = predicted[group * cfg.state_dim + channel];
            let rel_err = relative_error(measured, predicted);
            max_rel_err = max_rel_err.max(rel_err);
            rows.push(ChannelLossRow {
                group,
                channel,
                measured,
                predicted,
                rel_err,
            });
        }
    }
    Ok(ChannelLossTable {
        layer,
        rows,
        max_rel_err,
    })
}

/// Stationary variance of a scalar state channel driven by unit-variance
/// white noise: `b_bar^2 / (1 - a_bar^2)`, the closed form of the
/// diagonal discrete Lyapunov recursion.
pub fn analytic_lti_controllability(a_bar: f64, b_bar: f64) -> Result<f64> {
    if !(a_bar.abs() < 1.0) {
        return Err(Error::Unstable { a_bar });
    }
    Ok(b_bar * b_bar / (1.0 - a_bar * a_bar))
}

/// Empirical mean of the squared state under white-noise drive, averaged
/// over `sequences` independent scans of length `seq_len`, computed with
/// the production scan.
pub fn empirical_state_energy(
    a_bar: f64,
    b_bar: f64,
    seq_len: usize,
    sequences: usize,
    seed: u64,
) -> Result<f64> {
    if !(a_bar.abs() < 1.0) {
        return Err(Error::Unstable { a_bar });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = vec![a_bar; seq_len];
    let b = vec![b_bar; seq_len];
    let c = vec![0.0f64; seq_len];
    let mut total = 0.0f64;
    for _ in 0..sequences {
        let x: Vec<f64> = (0..seq_len)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let out = ssm_scan(
            &ScanParams {
                seq_len,
                heads: 1,
                head_dim: 1,
                state_dim: 1,
                groups: 1,
                x: &x,
                a_bar: &a,
                b_bar: &b,
                c_prime: &c,
                feedthrough: &[0.0],
            },
            None,
            &ScanOptions {
                capture: true,
                zero_channel: None,
            },
        )?;
        let capture = out.capture.expect("capture requested");
        let sum_sq: f64 = capture.hidden.iter().map(|&h| h * h).sum();
        total += sum_sq / seq_len as f64;
    }
    Ok(total / sequences as f64)
}

/// Spearman rank correlation (average ranks on ties; 0 by convention when
/// either input is constant) plus top-k index overlap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankAgreement {
    pub spearman: f64,
    pub top_k_overlap: f64,
}

pub fn rank_agreement(a: &[f64], b: &[f64], top_k: usize) -> Result<RankAgreement> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            tensor: "rank agreement",
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() || top_k == 0 || top_k > a.len() {
        return Err(Error::InvalidParameter {
            name: "top_k",
            value: top_k as f64,
            constraint: "1 <= top_k <= len",
        });
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let spearman = pearson(&ra, &rb);

    let top = |v: &[f64]| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_unstable_by(|&x, &y| v[y].total_cmp(&v[x]).then_with(|| x.cmp(&y)));
        idx.truncate(top_k);
        idx
    };
    let ta = top(a);
    let tb = top(b);
    let overlap = ta.iter().filter(|i| tb.contains(i)).count() as f64 / top_k as f64;

    Ok(RankAgreement {
        spearman,
        top_k_overlap: overlap,
    })
}

/// Ranks 1..n with ties sharing the average of their positions.
fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_unstable_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0f64; v.len()];
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j + 1 < v.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b.iter()) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

/// Full-model forward with one state channel of one layer forced to zero
/// throughout the scan — the reference model that soft weight masking
/// must reproduce exactly.
pub fn model_forward_with_zeroed_channel(
    weights: &ModelWeights<f64>,
    batch: &SequenceBatch,
    layer: usize,
    group: usize,
    channel: usize,
) -> Result<Vec<f64>> {
    let cfg = &weights.config;
    if layer >= cfg.n_layers {
        return Err(Error::LayerOutOfRange {
            layer,
            layers: cfg.n_layers,
        });
    }
    let seq_len = batch.seq_len();
    let mut logits = Vec::with_capacity(batch.batch() * seq_len * cfg.vocab);
    for tokens in batch.sequences() {
        let mut acts = embed_sequence(weights, tokens)?;
        for (j, layer_weights) in weights.layers.iter().enumerate() {
            let run = block_forward_seq(
                &acts,
                seq_len,
                layer_weights,
                cfg,
                &BlockOptions {
                    zero_channel: (j == layer).then_some((group, channel)),
                    ..BlockOptions::default()
                },
            )?;
            acts = run.output;
        }
        logits.extend(unembed(weights, &acts, seq_len)?);
    }
    Ok(logits)
}

/// Pre-gating state outputs `y = H C'^T + D x` of one layer over a batch,
/// concatenated in sequence order. Upstream layers run dense.
pub fn layer_ssm_outputs(
    weights: &ModelWeights<f64>,
    batch: &SequenceBatch,
    layer: usize,
) -> Result<Vec<f64>> {
    let cfg = &weights.config;
    if layer >= cfg.n_layers {
        return Err(Error::LayerOutOfRange {
            layer,
            layers: cfg.n_layers,
        });
    }
    let seq_len = batch.seq_len();
    let mut out = Vec::with_capacity(batch.batch() * seq_len * cfg.expanded_dim());
    for tokens in batch.sequences() {
        let input = activations_before_layer(weights, tokens, layer)?;
        let run = block_forward_seq(
            &input,
            seq_len,
            &weights.layers[layer],
            cfg,
            &BlockOptions {
                keep_y_ssm: true,
                ..BlockOptions::default()
            },
        )?;
        out.extend(run.y_ssm.expect("y_ssm requested"));
    }
    Ok(out)
}

/// Locations of the two planted channels, as `(layer, group, channel)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlantedChannels {
    /// Tiny projection rows, high dynamic energy.
    pub phantom: (usize, usize, usize),
    /// Dominant projection rows, exactly zero dynamic energy.
    pub corporeal: (usize, usize, usize),
}

/// Construct a model where static weight norms and dynamic state energy
/// disagree on purpose.
///
/// The embedding is confined to the first half of the model dimensions,
/// with a strong common component along coordinate 0. The corporeal
/// channel's B/C rows live entirely in the unused half, so its pre-conv
/// activations are exactly zero on every input; its rows carry the
/// largest norms of the layer. The phantom channel's rows are the
/// smallest of the layer but align with the common input direction, and
/// its group's heads decay slowly with a large step size, so state energy
/// integrates across the whole context. Deterministic in `seed`.
pub fn build_phantom_scenario(
    cfg: &ModelConfig,
    seed: u64,
) -> Result<(ModelWeights<f32>, PlantedChannels)> {
    cfg.validate()?;
    if cfg.state_dim < 4 {
        return Err(Error::InvalidParameter {
            name: "state_dim",
            value: cfg.state_dim as f64,
            constraint: "phantom scenario needs state_dim >= 4",
        });
    }
    if cfg.n_layers == 0 {
        return Err(Error::InvalidParameter {
            name: "n_layers",
            value: 0.0,
            constraint: "phantom scenario needs at least one layer",
        });
    }
    let m = cfg.model_dim;
    let live_half = m / 2; // embeddings live in coords [0, live_half)
    if live_half < 2 {
        return Err(Error::InvalidParameter {
            name: "model_dim",
            value: m as f64,
            constraint: "phantom scenario needs model_dim >= 4",
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let planted = PlantedChannels {
        phantom: (0, 0, 1),
        corporeal: (0, cfg.groups - 1, cfg.state_dim - 2),
    };

    // Embedding: strong common +e0 component, noise inside the live half,
    // exact zeros elsewhere.
    let mut embedding = vec![0.0f32; cfg.vocab * m];
    for v in 0..cfg.vocab {
        embedding[v * m] = (1.5 + gauss(&mut rng, 0.25)) as f32;
        for i in 1..live_half {
            embedding[v * m + i] = gauss(&mut rng, 0.5) as f32;
        }
    }

    let r = cfg.expanded_dim();
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for layer_idx in 0..cfg.n_layers {
        let mut layer = LayerWeights::<f32>::zeros(cfg);
        layer.norm_gamma.fill(1.0);
        layer.out_norm_gamma.fill(1.0);
        layer.d.fill(1.0);
        for w in layer.w_in.iter_mut() {
            *w = gauss(&mut rng, 1.0 / (m as f64).sqrt()) as f32;
        }
        for w in layer.w_out.iter_mut() {
            *w = gauss(&mut rng, 1.0 / (r as f64).sqrt()) as f32;
        }
        for f in layer.conv_filters.iter_mut() {
            *f = gauss(&mut rng, 1.0 / (cfg.conv_width as f64).sqrt()) as f32;
        }
        // conv biases stay zero so masked-channel outputs are exactly zero
        for h in 0..cfg.heads {
            layer.a_log[h] = (rng.gen_range(1.0f64..16.0)).ln() as f32;
            layer.b_in[cfg.dt_offset() + h] = softplus_inverse(0.05) as f32;
        }

        if layer_idx == 0 {
            plant_channels(cfg, &mut layer, planted, live_half, &mut rng);
        }
        layers.push(layer);
    }

    let weights = ModelWeights {
        config: *cfg,
        embedding,
        layers,
        final_norm_gamma: vec![1.0; m],
    };
    weights.validate()?;
    Ok((weights, planted))
}

fn plant_channels(
    cfg: &ModelConfig,
    layer: &mut LayerWeights<f32>,
    planted: PlantedChannels,
    live_half: usize,
    rng: &mut ChaCha8Rng,
) {
    let m = cfg.model_dim;
    let k = cfg.heads_per_group();
    let (_, phantom_g, phantom_i) = planted.phantom;
    let (_, corporeal_g, corporeal_i) = planted.corporeal;

    // Write one projection row: `direction` normalized then scaled.
    fn set_row(m: usize, row: usize, direction: &[f64], norm: f64, w_in: &mut [f32]) {
        let len: f64 = direction.iter().map(|d| d * d).sum::<f64>().sqrt();
        let slice = &mut w_in[row * m..(row + 1) * m];
        slice.fill(0.0);
        for (i, &d) in direction.iter().enumerate() {
            slice[i] = (d / len * norm) as f32;
        }
    }

    // Generic channels: rows supported in the live half with norms in
    // [0.3, 1.5] so every non-planted channel has real activity.
    for g in 0..cfg.groups {
        for i in 0..cfg.state_dim {
            let is_phantom = (g, i) == (phantom_g, phantom_i);
            let is_corporeal = (g, i) == (corporeal_g, corporeal_i);
            if is_phantom || is_corporeal {
                continue;
            }
            for row in [
                LayerWeights::<f32>::b_row_index(cfg, g, i),
                LayerWeights::<f32>::c_row_index(cfg, g, i),
            ] {
                let mut dir = vec![0.0f64; live_half];
                for d in dir.iter_mut() {
                    *d = gauss(rng, 1.0);
                }
                let norm = rng.gen_range(0.3..1.5);
                set_row(m, row, &dir, norm, &mut layer.w_in);
            }
        }
    }

    // Phantom: the layer's smallest row norms, aligned with the common
    // input direction (B) and a live noise direction (C).
    let mut b_dir = vec![0.0f64; live_half];
    b_dir[0] = 1.0;
    set_row(
        m,
        LayerWeights::<f32>::b_row_index(cfg, phantom_g, phantom_i),
        &b_dir,
        0.05,
        &mut layer.w_in,
    );
    let mut c_dir = vec![0.0f64; live_half];
    c_dir[1] = 1.0;
    set_row(
        m,
        LayerWeights::<f32>::c_row_index(cfg, phantom_g, phantom_i),
        &c_dir,
        0.05,
        &mut layer.w_in,
    );

    // Corporeal: the layer's largest row norms, supported entirely in the
    // dead half of the embedding space.
    let dead = m - live_half;
    for row in [
        LayerWeights::<f32>::b_row_index(cfg, corporeal_g, corporeal_i),
        LayerWeights::<f32>::c_row_index(cfg, corporeal_g, corporeal_i),
    ] {
        let mut dir = vec![0.0f64; dead];
        for d in dir.iter_mut() {
            *d = gauss(rng, 1.0);
        }
        let len: f64 = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        let slice = &mut layer.w_in[row * m..(row + 1) * m];
        slice.fill(0.0);
        for (i, &d) in dir.iter().enumerate() {
            slice[live_half + i] = (d / len * 3.0) as f32;
        }
        layer.b_in[row] = 0.0;
    }

    // Identity conv taps (delta at the newest step) on the planted
    // channels keep their pre-activations sign-stable and, for the
    // corporeal channel, exactly zero.
    let w = cfg.conv_width;
    for (g, i) in [(phantom_g, phantom_i), (corporeal_g, corporeal_i)] {
        let flat = g * cfg.state_dim + i;
        for channel in [cfg.conv_b_offset() + flat, cfg.conv_c_offset() + flat] {
            layer.conv_filters[channel * w..(channel + 1) * w].fill(0.0);
            layer.conv_filters[channel * w + w - 1] = 1.0;
            layer.conv_bias[channel] = 0.0;
        }
    }

    // Phantom group's heads: slow decay, larger step size, positive
    // signal bias, so its state integrates across the whole context.
    for head in phantom_g * k..(phantom_g + 1) * k {
        layer.a_log[head] = (0.005f64).ln() as f32;
        layer.b_in[cfg.dt_offset() + head] = softplus_inverse(0.2) as f32;
        for p in 0..cfg.head_dim {
            layer.b_in[cfg.x_offset() + head * cfg.head_dim + p] = 0.6;
        }
    }
}

fn gauss(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    let g: f64 = StandardNormal.sample(rng);
    g * scale
}

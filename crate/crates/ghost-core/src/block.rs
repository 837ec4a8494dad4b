//! One residual block: RMSNorm, fused input projection, causal depthwise
//! convolution with SiLU, discretization, the sequential state scan, and
//! the gated output path.
//!
//! Layouts are time-major throughout: a sequence activation is `L x M`,
//! the conv stream is `L x (R + 2GN)`, scan inputs are `L x H x P`
//! (signal), `L x H` (decay), `L x H x N` (drive), `L x G x N` (readout).
//! The per-head state is `P x N`.

use alloc::vec;
use alloc::vec::Vec;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::scalar::{silu, softplus, Scalar};
use crate::weights::LayerWeights;

/// Per-step transients recorded during a scoring pass: the hidden state
/// after each update and the post-activation readout row.
#[derive(Debug, Clone, PartialEq)]
pub struct TransientCapture<T> {
    pub seq_len: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub state_dim: usize,
    pub groups: usize,
    /// `L x H x P x N`, the state after the update at each step.
    pub hidden: Vec<T>,
    /// `L x G x N`, the post-conv post-SiLU readout at each step.
    pub c_prime: Vec<T>,
}

impl<T: Scalar> TransientCapture<T> {
    fn with_capacity(
        seq_len: usize,
        heads: usize,
        head_dim: usize,
        state_dim: usize,
        groups: usize,
    ) -> Self {
        TransientCapture {
            seq_len,
            heads,
            head_dim,
            state_dim,
            groups,
            hidden: Vec::with_capacity(seq_len * heads * head_dim * state_dim),
            c_prime: Vec::with_capacity(seq_len * groups * state_dim),
        }
    }

    /// State block `H x P x N` at step `t`.
    #[inline]
    pub fn hidden_at(&self, t: usize) -> &[T] {
        let stride = self.heads * self.head_dim * self.state_dim;
        &self.hidden[t * stride..(t + 1) * stride]
    }

    /// Readout rows `G x N` at step `t`.
    #[inline]
    pub fn c_prime_at(&self, t: usize) -> &[T] {
        let stride = self.groups * self.state_dim;
        &self.c_prime[t * stride..(t + 1) * stride]
    }

    /// One state entry.
    #[inline]
    pub fn hidden_entry(&self, t: usize, head: usize, p: usize, n: usize) -> T {
        let idx = ((t * self.heads + head) * self.head_dim + p) * self.state_dim + n;
        self.hidden[idx]
    }
}

/// `v / sqrt(mean(v^2) + eps) * gamma`, elementwise.
pub fn rmsnorm<T: Scalar>(v: &[T], gamma: &[T], eps: f64) -> Result<Vec<T>> {
    if v.len() != gamma.len() {
        return Err(Error::DimensionMismatch {
            tensor: "rmsnorm gamma",
            expected: v.len(),
            got: gamma.len(),
        });
    }
    if !(eps >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "eps",
            value: eps,
            constraint: "eps >= 0",
        });
    }
    let mut out = vec![T::zero(); v.len()];
    rmsnorm_into(v, gamma, eps, &mut out);
    Ok(out)
}

fn rmsnorm_into<T: Scalar>(v: &[T], gamma: &[T], eps: f64, out: &mut [T]) {
    let mut sum_sq = T::zero();
    for &x in v {
        sum_sq += x * x;
    }
    let mean = sum_sq / T::from_f64(v.len() as f64);
    let scale = (mean + T::from_f64(eps)).sqrt().recip();
    for i in 0..v.len() {
        out[i] = v[i] * scale * gamma[i];
    }
}

/// The five outputs of the fused input projection for one normalized
/// timestep, in the fixed row order `[z; x; B; C; dt]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSlices<T> {
    pub z: Vec<T>,      // R, gate
    pub x: Vec<T>,      // R, signal
    pub b: Vec<T>,      // G x N, state drive
    pub c: Vec<T>,      // G x N, state readout
    pub dt_raw: Vec<T>, // H, pre-softplus timescales
}

/// Slices `w_in * u_norm + b_in` into the five projection outputs.
pub fn input_projection<T: Scalar>(
    u_norm: &[T],
    layer: &LayerWeights<T>,
    cfg: &ModelConfig,
) -> Result<ProjectionSlices<T>> {
    if u_norm.len() != cfg.model_dim {
        return Err(Error::DimensionMismatch {
            tensor: "u_norm",
            expected: cfg.model_dim,
            got: u_norm.len(),
        });
    }
    let mut proj = vec![T::zero(); cfg.proj_rows()];
    matvec_add_bias(&layer.w_in, &layer.b_in, u_norm, &mut proj);
    let r = cfg.expanded_dim();
    let gn = cfg.channels_per_layer();
    Ok(ProjectionSlices {
        z: proj[..r].to_vec(),
        x: proj[r..2 * r].to_vec(),
        b: proj[cfg.b_offset()..cfg.b_offset() + gn].to_vec(),
        c: proj[cfg.c_offset()..cfg.c_offset() + gn].to_vec(),
        dt_raw: proj[cfg.dt_offset()..cfg.dt_offset() + cfg.heads].to_vec(),
    })
}

/// Row-major `out = w * x + bias` with `w` of shape `out.len() x x.len()`.
#[inline]
fn matvec_add_bias<T: Scalar>(w: &[T], bias: &[T], x: &[T], out: &mut [T]) {
    let cols = x.len();
    for (row, o) in out.iter_mut().enumerate() {
        let wr = &w[row * cols..(row + 1) * cols];
        let mut acc = bias[row];
        for (wv, xv) in wr.iter().zip(x.iter()) {
            acc += *wv * *xv;
        }
        *o = acc;
    }
}

/// Causal depthwise convolution followed by SiLU.
///
/// `seq` is time-major `L x channels`; each channel `c` is convolved with
/// its own `conv_width`-tap filter against the current and previous
/// `conv_width - 1` steps, out-of-range steps reading as zero:
///
/// `out[t, c] = silu(bias[c] + sum_w filter[c, w] * seq[t - W + 1 + w, c])`
pub fn causal_depthwise_conv_silu<T: Scalar>(
    seq: &[T],
    seq_len: usize,
    filters: &[T],
    bias: &[T],
) -> Result<Vec<T>> {
    let channels = bias.len();
    if seq.len() != seq_len * channels {
        return Err(Error::DimensionMismatch {
            tensor: "conv input",
            expected: seq_len * channels,
            got: seq.len(),
        });
    }
    if filters.len() % channels != 0 || filters.is_empty() {
        return Err(Error::DimensionMismatch {
            tensor: "conv filters",
            expected: channels,
            got: filters.len(),
        });
    }
    let width = filters.len() / channels;
    let mut out = vec![T::zero(); seq.len()];
    for t in 0..seq_len {
        let row = &mut out[t * channels..(t + 1) * channels];
        for c in 0..channels {
            let filter = &filters[c * width..(c + 1) * width];
            let mut acc = bias[c];
            // taps w cover steps t - width + 1 + w
            let start_w = (width - 1).saturating_sub(t);
            for (w, &fv) in filter.iter().enumerate().skip(start_w) {
                let src_t = t + 1 + w - width;
                acc += fv * seq[src_t * channels + c];
            }
            row[c] = silu(acc);
        }
    }
    Ok(out)
}

/// Euler discretization of one head-step: `a_bar = exp(delta * a)` with
/// `a = -exp(a_log)`, and `b_bar = delta * b_prime`.
pub fn discretize<T: Scalar>(delta: T, a_log: T, b_prime: &[T]) -> Result<(T, Vec<T>)> {
    let mut b_bar = vec![T::zero(); b_prime.len()];
    let a_bar = discretize_into(delta, a_log, b_prime, &mut b_bar)?;
    Ok((a_bar, b_bar))
}

#[inline]
fn discretize_into<T: Scalar>(delta: T, a_log: T, b_prime: &[T], b_bar: &mut [T]) -> Result<T> {
    if !(delta > T::zero()) {
        return Err(Error::InvalidParameter {
            name: "delta",
            value: delta.as_f64(),
            constraint: "delta > 0",
        });
    }
    let a_bar = (delta * -a_log.exp()).exp();
    for (o, &b) in b_bar.iter_mut().zip(b_prime.iter()) {
        *o = delta * b;
    }
    Ok(a_bar)
}

/// Borrowed inputs to the sequential scan.
#[derive(Debug, Clone, Copy)]
pub struct ScanParams<'a, T> {
    pub seq_len: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub state_dim: usize,
    pub groups: usize,
    /// `L x H x P` post-conv signal.
    pub x: &'a [T],
    /// `L x H` decay factors.
    pub a_bar: &'a [T],
    /// `L x H x N` discretized drive.
    pub b_bar: &'a [T],
    /// `L x G x N` post-conv readout.
    pub c_prime: &'a [T],
    /// `H` feedthrough coefficients.
    pub feedthrough: &'a [T],
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ScanOptions {
    pub capture: bool,
    /// Diagnostic hook used by the pruning oracle: forces the state column
    /// of `(group, channel)` to zero after every update, which also nulls
    /// its readout contribution.
    pub zero_channel: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanOutput<T> {
    /// `L x H x P`.
    pub y: Vec<T>,
    /// `H x P x N` state after the last step.
    pub h_final: Vec<T>,
    pub capture: Option<TransientCapture<T>>,
}

/// Strictly sequential state update and readout:
///
/// `H_t = a_bar_t (.) H_{t-1} + x_t (x) b_bar_t`, `y_t = H_t c'_t + D x_t`
/// per head, with the readout row shared across each group of heads.
pub fn ssm_scan<T: Scalar>(
    params: &ScanParams<'_, T>,
    h_init: Option<&[T]>,
    options: &ScanOptions,
) -> Result<ScanOutput<T>> {
    let ScanParams {
        seq_len,
        heads,
        head_dim,
        state_dim,
        groups,
        ..
    } = *params;
    if groups == 0 || heads % groups != 0 {
        return Err(Error::InvalidConfig(alloc::format!(
            "heads ({heads}) must be divisible by groups ({groups})"
        )));
    }
    let heads_per_group = heads / groups;
    let checks: [(&'static str, usize, usize); 5] = [
        ("scan x", params.x.len(), seq_len * heads * head_dim),
        ("scan a_bar", params.a_bar.len(), seq_len * heads),
        (
            "scan b_bar",
            params.b_bar.len(),
            seq_len * heads * state_dim,
        ),
        (
            "scan c_prime",
            params.c_prime.len(),
            seq_len * groups * state_dim,
        ),
        ("scan feedthrough", params.feedthrough.len(), heads),
    ];
    for (tensor, got, expected) in checks {
        if got != expected {
            return Err(Error::DimensionMismatch {
                tensor,
                expected,
                got,
            });
        }
    }
    if let Some((group, channel)) = options.zero_channel {
        if group >= groups || channel >= state_dim {
            return Err(Error::ChannelOutOfRange { group, channel });
        }
    }

    let state_len = heads * head_dim * state_dim;
    let mut state = match h_init {
        Some(init) => {
            if init.len() != state_len {
                return Err(Error::DimensionMismatch {
                    tensor: "h_init",
                    expected: state_len,
                    got: init.len(),
                });
            }
            init.to_vec()
        }
        None => vec![T::zero(); state_len],
    };

    let mut y = vec![T::zero(); seq_len * heads * head_dim];
    let mut capture = options
        .capture
        .then(|| TransientCapture::with_capacity(seq_len, heads, head_dim, state_dim, groups));

    for t in 0..seq_len {
        for h in 0..heads {
            let g = h / heads_per_group;
            let a = params.a_bar[t * heads + h];
            let bb = &params.b_bar[(t * heads + h) * state_dim..(t * heads + h + 1) * state_dim];
            let cp =
                &params.c_prime[(t * groups + g) * state_dim..(t * groups + g + 1) * state_dim];
            let dv = params.feedthrough[h];
            let zeroed = match options.zero_channel {
                Some((zg, zi)) if zg == g => Some(zi),
                _ => None,
            };
            for p in 0..head_dim {
                let xv = params.x[(t * heads + h) * head_dim + p];
                let st =
                    &mut state[(h * head_dim + p) * state_dim..(h * head_dim + p + 1) * state_dim];
                let mut acc = T::zero();
                for n in 0..state_dim {
                    let mut s = a * st[n] + xv * bb[n];
                    if zeroed == Some(n) {
                        s = T::zero();
                    }
                    st[n] = s;
                    acc += s * cp[n];
                }
                let yv = acc + dv * xv;
                if !yv.is_finite() {
                    return Err(Error::ScanNumeric { time: t, head: h });
                }
                y[(t * heads + h) * head_dim + p] = yv;
            }
        }
        if let Some(cap) = capture.as_mut() {
            cap.hidden.extend_from_slice(&state);
            cap.c_prime.extend_from_slice(
                &params.c_prime[t * groups * state_dim..(t + 1) * groups * state_dim],
            );
        }
    }

    Ok(ScanOutput {
        y,
        h_final: state,
        capture,
    })
}

/// The scan inputs derived from a raw `L x M` input sequence: everything
/// the block does before the recurrence.
pub struct StagedInputs<T> {
    pub seq_len: usize,
    pub z: Vec<T>,       // L x R
    pub x: Vec<T>,       // L x H x P
    pub a_bar: Vec<T>,   // L x H
    pub b_bar: Vec<T>,   // L x H x N
    pub c_prime: Vec<T>, // L x G x N
}

pub fn stage_inputs<T: Scalar>(
    input: &[T],
    seq_len: usize,
    layer: &LayerWeights<T>,
    cfg: &ModelConfig,
) -> Result<StagedInputs<T>> {
    let m = cfg.model_dim;
    if input.len() != seq_len * m {
        return Err(Error::DimensionMismatch {
            tensor: "block input",
            expected: seq_len * m,
            got: input.len(),
        });
    }
    let r = cfg.expanded_dim();
    let gn = cfg.channels_per_layer();
    let heads = cfg.heads;
    let n = cfg.state_dim;
    let conv_ch = cfg.conv_channels();

    let mut z = vec![T::zero(); seq_len * r];
    let mut conv_in = vec![T::zero(); seq_len * conv_ch];
    let mut dt_raw = vec![T::zero(); seq_len * heads];
    let mut u_norm = vec![T::zero(); m];
    let mut proj = vec![T::zero(); cfg.proj_rows()];
    for t in 0..seq_len {
        rmsnorm_into(
            &input[t * m..(t + 1) * m],
            &layer.norm_gamma,
            cfg.eps,
            &mut u_norm,
        );
        matvec_add_bias(&layer.w_in, &layer.b_in, &u_norm, &mut proj);
        z[t * r..(t + 1) * r].copy_from_slice(&proj[..r]);
        // rows r..r+conv_ch are exactly the [x; B; C] stream
        conv_in[t * conv_ch..(t + 1) * conv_ch].copy_from_slice(&proj[r..r + conv_ch]);
        dt_raw[t * heads..(t + 1) * heads]
            .copy_from_slice(&proj[cfg.dt_offset()..cfg.dt_offset() + heads]);
    }

    let conv_out =
        causal_depthwise_conv_silu(&conv_in, seq_len, &layer.conv_filters, &layer.conv_bias)?;

    let mut x = vec![T::zero(); seq_len * r];
    let mut c_prime = vec![T::zero(); seq_len * gn];
    let mut a_bar = vec![T::zero(); seq_len * heads];
    let mut b_bar = vec![T::zero(); seq_len * heads * n];
    for t in 0..seq_len {
        let row = &conv_out[t * conv_ch..(t + 1) * conv_ch];
        x[t * r..(t + 1) * r].copy_from_slice(&row[..r]);
        c_prime[t * gn..(t + 1) * gn]
            .copy_from_slice(&row[cfg.conv_c_offset()..cfg.conv_c_offset() + gn]);
        let b_prime = &row[cfg.conv_b_offset()..cfg.conv_b_offset() + gn];
        for h in 0..heads {
            let g = cfg.group_of_head(h);
            let delta = softplus(dt_raw[t * heads + h]);
            let a = discretize_into(
                delta,
                layer.a_log[h],
                &b_prime[g * n..(g + 1) * n],
                &mut b_bar[(t * heads + h) * n..(t * heads + h + 1) * n],
            )?;
            a_bar[t * heads + h] = a;
        }
    }

    Ok(StagedInputs {
        seq_len,
        z,
        x,
        a_bar,
        b_bar,
        c_prime,
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BlockOptions {
    pub capture: bool,
    /// Keep the pre-gating scan output in the result.
    pub keep_y_ssm: bool,
    /// See [`ScanOptions::zero_channel`].
    pub zero_channel: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct BlockRun<T> {
    /// `L x M` residual-stream output.
    pub output: Vec<T>,
    /// `L x H x P` pre-gating scan output, if requested.
    pub y_ssm: Option<Vec<T>>,
    pub capture: Option<TransientCapture<T>>,
}

/// Full block on one sequence: norm, project, conv+SiLU, discretize, scan,
/// gate, output norm, project, residual.
pub fn block_forward_seq<T: Scalar>(
    input: &[T],
    seq_len: usize,
    layer: &LayerWeights<T>,
    cfg: &ModelConfig,
    options: &BlockOptions,
) -> Result<BlockRun<T>> {
    let staged = stage_inputs(input, seq_len, layer, cfg)?;
    let scan = ssm_scan(
        &ScanParams {
            seq_len,
            heads: cfg.heads,
            head_dim: cfg.head_dim,
            state_dim: cfg.state_dim,
            groups: cfg.groups,
            x: &staged.x,
            a_bar: &staged.a_bar,
            b_bar: &staged.b_bar,
            c_prime: &staged.c_prime,
            feedthrough: &layer.d,
        },
        None,
        &ScanOptions {
            capture: options.capture,
            zero_channel: options.zero_channel,
        },
    )?;

    let m = cfg.model_dim;
    let r = cfg.expanded_dim();
    let mut output = vec![T::zero(); seq_len * m];
    let mut gated = vec![T::zero(); r];
    let mut normed = vec![T::zero(); r];
    let mut projected = vec![T::zero(); m];
    for t in 0..seq_len {
        for (i, g) in gated.iter_mut().enumerate() {
            *g = scan.y[t * r + i] * silu(staged.z[t * r + i]);
        }
        rmsnorm_into(&gated, &layer.out_norm_gamma, cfg.eps, &mut normed);
        matvec_add_bias(&layer.w_out, &layer.b_out, &normed, &mut projected);
        for i in 0..m {
            output[t * m + i] = input[t * m + i] + projected[i];
        }
    }

    Ok(BlockRun {
        output,
        y_ssm: options.keep_y_ssm.then_some(scan.y),
        capture: scan.capture,
    })
}

/// Batched block forward over `B x L x M`.
pub fn block_forward<T: Scalar>(
    input: &[T],
    batch: usize,
    seq_len: usize,
    layer: &LayerWeights<T>,
    cfg: &ModelConfig,
    capture: bool,
) -> Result<(Vec<T>, Vec<TransientCapture<T>>)> {
    let stride = seq_len * cfg.model_dim;
    if input.len() != batch * stride {
        return Err(Error::DimensionMismatch {
            tensor: "block batch input",
            expected: batch * stride,
            got: input.len(),
        });
    }
    let mut output = Vec::with_capacity(input.len());
    let mut captures = Vec::new();
    for b in 0..batch {
        let run = block_forward_seq(
            &input[b * stride..(b + 1) * stride],
            seq_len,
            layer,
            cfg,
            &BlockOptions {
                capture,
                ..BlockOptions::default()
            },
        )?;
        output.extend_from_slice(&run.output);
        if let Some(cap) = run.capture {
            captures.push(cap);
        }
    }
    Ok((output, captures))
}

/// The scan output with the feedthrough term excluded: `y = H C'^T` only.
/// This is the quantity the channel-loss oracle differences, since the
/// feedthrough does not pass through the state.
pub fn block_state_outputs<T: Scalar>(
    input: &[T],
    seq_len: usize,
    layer: &LayerWeights<T>,
    cfg: &ModelConfig,
    zero_channel: Option<(usize, usize)>,
) -> Result<Vec<T>> {
    let staged = stage_inputs(input, seq_len, layer, cfg)?;
    let zero_d = vec![T::zero(); cfg.heads];
    let scan = ssm_scan(
        &ScanParams {
            seq_len,
            heads: cfg.heads,
            head_dim: cfg.head_dim,
            state_dim: cfg.state_dim,
            groups: cfg.groups,
            x: &staged.x,
            a_bar: &staged.a_bar,
            b_bar: &staged.b_bar,
            c_prime: &staged.c_prime,
            feedthrough: &zero_d,
        },
        None,
        &ScanOptions {
            capture: false,
            zero_channel,
        },
    )?;
    Ok(scan.y)
}

//! Whole-model byte-level forward: embed, residual blocks, final norm,
//! tied unembedding head.

use alloc::vec;
use alloc::vec::Vec;

use crate::block::{block_forward_seq, rmsnorm, BlockOptions, TransientCapture};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::weights::{ModelWeights, SequenceBatch};

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    /// `B x L x vocab` next-token logits.
    pub logits: Vec<T>,
    /// One capture per batch sequence, for the requested layer.
    pub captures: Option<Vec<TransientCapture<T>>>,
}

/// Embed one token sequence into `L x M` activations.
pub fn embed_sequence<T: Scalar>(weights: &ModelWeights<T>, tokens: &[u32]) -> Result<Vec<T>> {
    let m = weights.config.model_dim;
    let vocab = weights.config.vocab;
    let mut out = Vec::with_capacity(tokens.len() * m);
    for (position, &token) in tokens.iter().enumerate() {
        if token as usize >= vocab {
            return Err(Error::TokenOutOfRange {
                position,
                token,
                vocab,
            });
        }
        out.extend_from_slice(weights.embedding_row(token));
    }
    Ok(out)
}

/// Final norm plus tied unembedding: `logits[t] = E * rmsnorm(h[t])`.
pub fn unembed<T: Scalar>(
    weights: &ModelWeights<T>,
    hidden: &[T],
    seq_len: usize,
) -> Result<Vec<T>> {
    let m = weights.config.model_dim;
    let vocab = weights.config.vocab;
    if hidden.len() != seq_len * m {
        return Err(Error::DimensionMismatch {
            tensor: "unembed hidden",
            expected: seq_len * m,
            got: hidden.len(),
        });
    }
    let mut logits = vec![T::zero(); seq_len * vocab];
    for t in 0..seq_len {
        let normed = rmsnorm(
            &hidden[t * m..(t + 1) * m],
            &weights.final_norm_gamma,
            weights.config.eps,
        )?;
        let row = &mut logits[t * vocab..(t + 1) * vocab];
        for (v, o) in row.iter_mut().enumerate() {
            let emb = &weights.embedding[v * m..(v + 1) * m];
            let mut acc = T::zero();
            for i in 0..m {
                acc += normed[i] * emb[i];
            }
            *o = acc;
        }
    }
    Ok(logits)
}

/// Forward one sequence through layers `0..upto_layer`, returning the
/// residual-stream input that layer `upto_layer` would see.
pub fn activations_before_layer<T: Scalar>(
    weights: &ModelWeights<T>,
    tokens: &[u32],
    upto_layer: usize,
) -> Result<Vec<T>> {
    if upto_layer > weights.config.n_layers {
        return Err(Error::LayerOutOfRange {
            layer: upto_layer,
            layers: weights.config.n_layers,
        });
    }
    let mut acts = embed_sequence(weights, tokens)?;
    for layer in &weights.layers[..upto_layer] {
        acts = block_forward_seq(
            &acts,
            tokens.len(),
            layer,
            &weights.config,
            &BlockOptions::default(),
        )?
        .output;
    }
    Ok(acts)
}

/// Full forward pass over a batch, optionally capturing the transients of
/// one layer (one capture per sequence).
pub fn model_forward<T: Scalar>(
    weights: &ModelWeights<T>,
    batch: &SequenceBatch,
    capture_layer: Option<usize>,
) -> Result<ForwardOutput<T>> {
    let cfg = &weights.config;
    if let Some(layer) = capture_layer {
        if layer >= cfg.n_layers {
            return Err(Error::LayerOutOfRange {
                layer,
                layers: cfg.n_layers,
            });
        }
    }
    let seq_len = batch.seq_len();
    let mut logits = Vec::with_capacity(batch.batch() * seq_len * cfg.vocab);
    let mut captures = capture_layer.map(|_| Vec::with_capacity(batch.batch()));

    for tokens in batch.sequences() {
        let mut acts = embed_sequence(weights, tokens)?;
        for (j, layer) in weights.layers.iter().enumerate() {
            let capture_here = capture_layer == Some(j);
            let run = block_forward_seq(
                &acts,
                seq_len,
                layer,
                cfg,
                &BlockOptions {
                    capture: capture_here,
                    ..BlockOptions::default()
                },
            )
            .map_err(|e| match e {
                Error::ScanNumeric { time, head } => Error::LayerNumeric {
                    layer: j,
                    time,
                    head,
                },
                other => other,
            })?;
            acts = run.output;
            if capture_here {
                captures
                    .as_mut()
                    .expect("capture requested")
                    .push(run.capture.expect("capture recorded"));
            }
        }
        logits.extend(unembed(weights, &acts, seq_len)?);
    }

    Ok(ForwardOutput { logits, captures })
}

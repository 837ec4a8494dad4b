//! Output-divergence metrics between a dense and a pruned model.
//!
//! Desk-scale models have random weights, so perplexity is meaningless;
//! instead we measure how far pruning moved the output distribution:
//! mean squared logit difference, mean KL(dense || pruned) per position,
//! and the change in next-token cross-entropy.

use ghost_core::model::model_forward;
use ghost_core::{Error, ModelWeights, Scalar, SequenceBatch};
use serde::{Deserialize, Serialize};

use crate::parallel::map_indexed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    /// Mean over positions and vocabulary of squared logit differences.
    pub logit_mse: f64,
    /// Mean over positions of KL(dense || pruned).
    pub mean_kl: f64,
    /// Mean next-token cross-entropy of the pruned model minus the dense
    /// model's, over all positions with a target.
    pub ce_delta: f64,
    /// Positions contributing to `logit_mse` and `mean_kl`.
    pub positions: u64,
    pub sequences: usize,
}

#[derive(Default, Clone, Copy)]
struct Partial {
    sq_sum: f64,
    kl_sum: f64,
    ce_dense: f64,
    ce_pruned: f64,
    positions: u64,
    targets: u64,
}

/// Max-stabilized log-softmax.
fn log_softmax(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0f64;
    for (&l, o) in logits.iter().zip(out.iter_mut()) {
        *o = l - max;
        sum += o.exp();
    }
    let log_z = sum.ln();
    for o in out.iter_mut() {
        *o -= log_z;
    }
}

fn sequence_partial<T: Scalar>(
    dense: &ModelWeights<T>,
    pruned: &ModelWeights<T>,
    tokens: &[u32],
) -> Result<Partial, Error> {
    let vocab = dense.config.vocab;
    let seq_len = tokens.len();
    let batch = SequenceBatch::from_flat(tokens.to_vec(), 1, seq_len)?;
    let dense_logits = model_forward(dense, &batch, None)?.logits;
    let pruned_logits = model_forward(pruned, &batch, None)?.logits;

    let mut partial = Partial::default();
    let mut ld = vec![0.0f64; vocab];
    let mut lp = vec![0.0f64; vocab];
    let mut log_pd = vec![0.0f64; vocab];
    let mut log_pp = vec![0.0f64; vocab];
    for t in 0..seq_len {
        for v in 0..vocab {
            ld[v] = dense_logits[t * vocab + v].as_f64();
            lp[v] = pruned_logits[t * vocab + v].as_f64();
            let diff = ld[v] - lp[v];
            partial.sq_sum += diff * diff;
        }
        log_softmax(&ld, &mut log_pd);
        log_softmax(&lp, &mut log_pp);
        let mut kl = 0.0f64;
        for v in 0..vocab {
            kl += log_pd[v].exp() * (log_pd[v] - log_pp[v]);
        }
        // Gibbs: KL >= 0; tiny negatives are pure roundoff.
        partial.kl_sum += kl.max(0.0);
        partial.positions += 1;

        if t + 1 < seq_len {
            let target = tokens[t + 1] as usize;
            partial.ce_dense -= log_pd[target];
            partial.ce_pruned -= log_pp[target];
            partial.targets += 1;
        }
    }
    Ok(partial)
}

/// Divergence of `pruned` from `dense` over an evaluation batch.
/// Sequences may be evaluated on `threads` workers; partial sums merge in
/// sequence order, so the result is independent of the thread count.
pub fn divergence<T: Scalar>(
    dense: &ModelWeights<T>,
    pruned: &ModelWeights<T>,
    eval_set: &SequenceBatch,
    threads: usize,
) -> Result<DivergenceReport, Error> {
    if dense.config != pruned.config {
        return Err(Error::InvalidConfig(
            "dense and pruned models have different configs".into(),
        ));
    }
    let sequences: Vec<&[u32]> = eval_set.sequences().collect();
    let partials = map_indexed(threads, &sequences, |_, tokens| {
        sequence_partial(dense, pruned, tokens)
    });

    let mut total = Partial::default();
    for partial in partials {
        let p = partial?;
        total.sq_sum += p.sq_sum;
        total.kl_sum += p.kl_sum;
        total.ce_dense += p.ce_dense;
        total.ce_pruned += p.ce_pruned;
        total.positions += p.positions;
        total.targets += p.targets;
    }

    let report = DivergenceReport {
        logit_mse: total.sq_sum / (total.positions as f64 * dense.config.vocab as f64),
        mean_kl: total.kl_sum / total.positions as f64,
        ce_delta: (total.ce_pruned - total.ce_dense) / total.targets as f64,
        positions: total.positions,
        sequences: eval_set.batch(),
    };
    debug_assert!(report.mean_kl >= 0.0);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ghost_core::init::{random_model, random_tokens};
    use ghost_core::ModelConfig;

    #[test]
    fn identical_models_diverge_by_exactly_zero() {
        let cfg = ModelConfig::desk_default();
        let weights = random_model(&cfg, 1).unwrap().convert::<f64>();
        let eval = random_tokens(cfg.vocab, 2, 24, 2).unwrap();
        let report = divergence(&weights, &weights, &eval, 1).unwrap();
        assert_eq!(report.logit_mse, 0.0);
        assert_eq!(report.mean_kl, 0.0);
        assert_eq!(report.ce_delta, 0.0);
        assert_eq!(report.positions, 48);
    }

    #[test]
    fn config_mismatch_is_rejected() {
        let cfg = ModelConfig::desk_default();
        let mut other = cfg;
        other.n_layers = 2;
        let a = random_model(&cfg, 1).unwrap().convert::<f64>();
        let b = random_model(&other, 1).unwrap().convert::<f64>();
        let eval = random_tokens(cfg.vocab, 1, 8, 2).unwrap();
        assert!(divergence(&a, &b, &eval, 1).is_err());
    }

    #[test]
    fn thread_count_does_not_change_the_result() {
        let cfg = ModelConfig::desk_default();
        let dense = random_model(&cfg, 3).unwrap().convert::<f64>();
        let mut mask =
            ghost_core::scorer::PruneMask::new(&cfg, ghost_core::scorer::MethodTag::Ghost, 0.0, 0);
        for i in 0..8 {
            mask.keep[i * 3] = false;
        }
        let pruned = ghost_core::pipeline::apply_mask_model(&dense, &mask).unwrap();
        let eval = random_tokens(cfg.vocab, 5, 16, 4).unwrap();
        let one = divergence(&dense, &pruned, &eval, 1).unwrap();
        let four = divergence(&dense, &pruned, &eval, 4).unwrap();
        assert_eq!(one, four);
        assert!(one.mean_kl > 0.0);
    }
}

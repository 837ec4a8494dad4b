//! Whole-model scoring pass for CSV exports: one dense forward per
//! sequence, transients of every layer folded into per-layer
//! accumulators. Sequences shard across workers; shard accumulators
//! merge in sequence order, so results are thread-count independent.

use ghost_core::scorer::{accumulate_sequence, SaliencyAccumulator};
use ghost_core::{Error, ModelWeights, Scalar, SequenceBatch};

use crate::parallel::map_indexed;

pub fn score_model<T: Scalar>(
    weights: &ModelWeights<T>,
    batch: &SequenceBatch,
    threads: usize,
) -> Result<Vec<SaliencyAccumulator>, Error> {
    let cfg = &weights.config;
    let sequences: Vec<&[u32]> = batch.sequences().collect();
    let per_sequence = map_indexed(threads, &sequences, |_, tokens| {
        let mut accs: Vec<SaliencyAccumulator> = (0..cfg.n_layers)
            .map(|_| SaliencyAccumulator::new(cfg))
            .collect();
        accumulate_sequence(weights, tokens, &mut accs).map(|()| accs)
    });

    let mut merged: Vec<SaliencyAccumulator> = (0..cfg.n_layers)
        .map(|_| SaliencyAccumulator::new(cfg))
        .collect();
    for shard in per_sequence {
        let shard = shard?;
        for (total, part) in merged.iter_mut().zip(shard.iter()) {
            total.merge(part)?;
        }
    }
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ghost_core::init::{random_model, random_tokens};
    use ghost_core::scorer::ScoringMode;
    use ghost_core::ModelConfig;

    #[test]
    fn sharded_scoring_matches_serial_scoring() {
        let cfg = ModelConfig::desk_default();
        let weights = random_model(&cfg, 10).unwrap().convert::<f64>();
        let batch = random_tokens(cfg.vocab, 6, 24, 11).unwrap();
        let serial = score_model(&weights, &batch, 1).unwrap();
        let sharded = score_model(&weights, &batch, 3).unwrap();
        for (a, b) in serial.iter().zip(sharded.iter()) {
            assert_eq!(a.samples_seen(), b.samples_seen());
            let ta = a.finalize(0, ScoringMode::Product).unwrap();
            let tb = b.finalize(0, ScoringMode::Product).unwrap();
            assert_eq!(ta.raw, tb.raw);
        }
    }
}

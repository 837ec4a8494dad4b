//! Property tests of the recurrence and the block forward pass.

use ghost_core::block::{
    block_forward_seq, causal_depthwise_conv_silu, discretize, ssm_scan, BlockOptions, ScanOptions,
    ScanParams,
};
use ghost_core::init::{random_model, random_tokens};
use ghost_core::model::{embed_sequence, model_forward};
use ghost_core::{ModelConfig, SequenceBatch};
use proptest::prelude::*;

proptest! {
    // Decay factors stay strictly inside (0, 1) for any finite decay
    // exponent and positive step in the ranges a trained model can reach.
    #[test]
    fn decay_factor_stays_in_unit_interval(
        a_log in -20.0f64..3.0,
        delta in 1e-6f64..1.0,
    ) {
        let (a_bar, _) = discretize(delta, a_log, &[1.0]).unwrap();
        prop_assert!(a_bar > 0.0, "a_bar = {a_bar}");
        prop_assert!(a_bar < 1.0, "a_bar = {a_bar}");
    }

    // The homogeneous part of the scan is linear in the initial state.
    #[test]
    fn scan_homogeneous_part_is_linear(
        h1 in proptest::collection::vec(-2.0f64..2.0, 4),
        h2 in proptest::collection::vec(-2.0f64..2.0, 4),
        a in 0.05f64..0.95,
    ) {
        let seq_len = 6;
        let run = |init: &[f64]| {
            ssm_scan(
                &ScanParams {
                    seq_len,
                    heads: 2,
                    head_dim: 1,
                    state_dim: 2,
                    groups: 1,
                    x: &[0.0; 12],
                    a_bar: &vec![a; seq_len * 2],
                    b_bar: &vec![1.0; seq_len * 2 * 2],
                    c_prime: &vec![0.7; seq_len * 2],
                    feedthrough: &[0.0, 0.0],
                },
                Some(init),
                &ScanOptions::default(),
            )
            .unwrap()
        };
        let sum: Vec<f64> = h1.iter().zip(h2.iter()).map(|(x, y)| x + y).collect();
        let o1 = run(&h1);
        let o2 = run(&h2);
        let os = run(&sum);
        for t in 0..seq_len * 2 {
            prop_assert!((os.y[t] - (o1.y[t] + o2.y[t])).abs() < 1e-12);
        }
        for n in 0..4 {
            prop_assert!((os.h_final[n] - (o1.h_final[n] + o2.h_final[n])).abs() < 1e-12);
        }
    }

    // A zeroed conv channel (zero filter, zero bias) emits exactly zero
    // whatever its input history.
    #[test]
    fn zeroed_conv_channel_is_silent(
        seq in proptest::collection::vec(-5.0f64..5.0, 12),
        live_filter in proptest::collection::vec(-1.0f64..1.0, 3),
    ) {
        let channels = 2;
        let mut filters = vec![0.0f64; channels * 3];
        filters[..3].copy_from_slice(&live_filter);
        let bias = [0.3f64, 0.0];
        let out = causal_depthwise_conv_silu(&seq, 6, &filters, &bias).unwrap();
        for t in 0..6 {
            prop_assert_eq!(out[t * channels + 1], 0.0);
        }
    }
}

#[test]
fn whole_model_forward_is_bit_deterministic() {
    let cfg = ModelConfig::desk_default();
    let weights = random_model(&cfg, 42).unwrap().convert::<f64>();
    let batch = random_tokens(cfg.vocab, 4, 64, 43).unwrap();
    let a = model_forward(&weights, &batch, Some(1)).unwrap();
    let b = model_forward(&weights, &batch, Some(1)).unwrap();
    assert_eq!(a.logits, b.logits);
    let ca = a.captures.unwrap();
    let cb = b.captures.unwrap();
    assert_eq!(ca.len(), cb.len());
    for (x, y) in ca.iter().zip(cb.iter()) {
        assert_eq!(x.hidden, y.hidden);
        assert_eq!(x.c_prime, y.c_prime);
    }
}

#[test]
fn block_output_shape_matches_input_shape() {
    let cfg = ModelConfig::desk_default();
    let weights = random_model(&cfg, 7).unwrap().convert::<f64>();
    let tokens = random_tokens(cfg.vocab, 1, 40, 8).unwrap();
    let input = embed_sequence(&weights, tokens.sequence(0)).unwrap();
    let run = block_forward_seq(
        &input,
        40,
        &weights.layers[0],
        &cfg,
        &BlockOptions::default(),
    )
    .unwrap();
    assert_eq!(run.output.len(), input.len());
}

#[test]
fn fast_and_oracle_modes_agree_loosely() {
    // f32 and f64 runs of the same model stay within single-precision
    // noise of each other at desk scale.
    let cfg = ModelConfig::desk_default();
    let weights32 = random_model(&cfg, 3).unwrap();
    let weights64 = weights32.convert::<f64>();
    let batch = random_tokens(cfg.vocab, 2, 32, 4).unwrap();
    let fast = model_forward(&weights32, &batch, None).unwrap();
    let oracle = model_forward(&weights64, &batch, None).unwrap();
    let mut max_abs = 0.0f64;
    let mut scale = 0.0f64;
    for (a, b) in fast.logits.iter().zip(oracle.logits.iter()) {
        max_abs = max_abs.max((f64::from(*a) - b).abs());
        scale = scale.max(b.abs());
    }
    assert!(scale > 0.0);
    assert!(max_abs / scale < 1e-3, "relative drift {}", max_abs / scale);
}

#[test]
fn batch_raggedness_is_rejected_at_construction() {
    assert!(SequenceBatch::from_rows(&[vec![1, 2, 3], vec![4, 5]]).is_err());
}

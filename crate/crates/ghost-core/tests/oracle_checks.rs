//! Cross-checks between the scorer, the pruning pipeline, and the
//! brute-force oracle paths, at sizes small enough to run in seconds.

use ghost_core::init::{random_model, random_tokens};
use ghost_core::model::model_forward;
use ghost_core::oracle::{
    analytic_lti_controllability, build_phantom_scenario, channel_loss_table,
    empirical_state_energy, layer_ssm_outputs, model_forward_with_zeroed_channel, rank_agreement,
};
use ghost_core::pipeline::{apply_mask_model, sequential_prune, PruneSettings};
use ghost_core::scorer::{
    accumulate_sequence, MethodTag, PruneMask, SaliencyAccumulator, ScoringMode,
};
use ghost_core::ModelConfig;

fn small_config() -> ModelConfig {
    ModelConfig {
        model_dim: 8,
        expand: 2,
        heads: 4,
        head_dim: 4,
        groups: 2,
        state_dim: 5,
        n_layers: 2,
        conv_width: 3,
        vocab: 24,
        eps: 1e-5,
    }
}

#[test]
fn channel_loss_identity_on_every_layer_and_channel() {
    let cfg = small_config();
    let weights = random_model(&cfg, 51).unwrap().convert::<f64>();
    let calib = random_tokens(cfg.vocab, 3, 24, 52).unwrap();
    for layer in 0..cfg.n_layers {
        let table = channel_loss_table(&weights, layer, &calib).unwrap();
        assert_eq!(table.rows.len(), cfg.channels_per_layer());
        assert!(
            table.max_rel_err < 1e-9,
            "layer {layer}: max rel err {}",
            table.max_rel_err
        );
        for row in &table.rows {
            assert!(row.measured >= 0.0);
            assert!(row.predicted >= 0.0);
        }
    }
}

#[test]
fn soft_masking_equals_forced_zero_channel_exactly() {
    let cfg = small_config();
    let weights = random_model(&cfg, 53).unwrap().convert::<f64>();
    let batch = random_tokens(cfg.vocab, 2, 20, 54).unwrap();
    for (layer, group, channel) in [(0, 0, 1), (0, 1, 4), (1, 0, 0), (1, 1, 2)] {
        let mut mask = PruneMask::new(&cfg, MethodTag::Ghost, 0.0, 0);
        let gn = cfg.channels_per_layer();
        mask.keep[layer * gn + group * cfg.state_dim + channel] = false;
        let masked = apply_mask_model(&weights, &mask).unwrap();
        let masked_logits = model_forward(&masked, &batch, None).unwrap().logits;
        let forced =
            model_forward_with_zeroed_channel(&weights, &batch, layer, group, channel).unwrap();
        assert_eq!(
            masked_logits, forced,
            "masking ({layer},{group},{channel}) must equal the zeroed-channel run bitwise"
        );
    }
}

#[test]
fn stationary_state_energy_matches_the_closed_form() {
    let analytic = analytic_lti_controllability(0.5, 1.0).unwrap();
    assert!((analytic - 4.0 / 3.0).abs() < 1e-15);
    let empirical = empirical_state_energy(0.5, 1.0, 50_000, 16, 7).unwrap();
    let rel = (empirical - analytic).abs() / analytic;
    assert!(rel < 0.05, "relative error {rel}");

    // Memoryless case: variance equals b^2.
    let memoryless = empirical_state_energy(0.0, 2.0, 50_000, 8, 8).unwrap();
    assert!((memoryless - 4.0).abs() / 4.0 < 0.05);
}

#[test]
fn phantom_scenario_separates_the_two_score_families() {
    let mut cfg = ModelConfig::desk_default();
    cfg.n_layers = 1;
    let (weights32, planted) = build_phantom_scenario(&cfg, 42).unwrap();
    let weights = weights32.convert::<f64>();
    let calib = random_tokens(cfg.vocab, 4, 64, 43).unwrap();

    let (pl, pg, pi) = planted.phantom;
    let (cl, cg, ci) = planted.corporeal;
    assert_eq!(pl, 0);
    assert_eq!(cl, 0);

    // Saliency scores.
    let mut accs: Vec<SaliencyAccumulator> = vec![SaliencyAccumulator::new(&cfg)];
    for tokens in calib.sequences() {
        accumulate_sequence(&weights, tokens, &mut accs).unwrap();
    }
    let table = accs[0].finalize(0, ScoringMode::Product).unwrap();
    let phantom_s = table.scores[pg * cfg.state_dim + pi];
    let corporeal_s = table.scores[cg * cfg.state_dim + ci];
    assert_eq!(corporeal_s, 0.0, "corporeal channel must be exactly silent");
    assert!(phantom_s > corporeal_s);

    // A channel with zero saliency costs exactly nothing to prune.
    let corporeal_loss =
        ghost_core::oracle::bruteforce_channel_loss(&weights, 0, cg, ci, &calib).unwrap();
    assert_eq!(corporeal_loss, 0.0);
    // The corporeal channel is the unique minimum.
    let min_count = table.scores.iter().filter(|&&s| s == 0.0).count();
    assert_eq!(min_count, 1);

    // Magnitude scores order the other way around.
    let mag = ghost_core::baselines::magnitude_score(&weights.layers[0], &cfg, 0).unwrap();
    let phantom_m = mag.scores[pg * cfg.state_dim + pi];
    let corporeal_m = mag.scores[cg * cfg.state_dim + ci];
    assert!(corporeal_m > phantom_m);
    let phantom_is_min = mag
        .scores
        .iter()
        .enumerate()
        .all(|(i, &s)| i == pg * cfg.state_dim + pi || s > phantom_m);
    assert!(
        phantom_is_min,
        "phantom must carry the smallest static score"
    );

    // The two scorers disagree on ranking by construction.
    let agreement = rank_agreement(&table.scores, &mag.scores, 3).unwrap();
    assert!(agreement.spearman < 0.9);
}

#[test]
fn pipelines_prune_opposite_channels_on_the_scenario() {
    let mut cfg = ModelConfig::desk_default();
    cfg.n_layers = 1;
    let (weights32, planted) = build_phantom_scenario(&cfg, 42).unwrap();
    let weights = weights32.convert::<f64>();
    let calib = random_tokens(cfg.vocab, 4, 64, 43).unwrap();
    let kappa = 1.0 / cfg.channels_per_layer() as f64; // prune exactly one

    let (_, pg, pi) = planted.phantom;
    let (_, cg, ci) = planted.corporeal;

    let (ghost_model, ghost_mask, _) = sequential_prune(
        &weights,
        &calib,
        &PruneSettings {
            method: MethodTag::Ghost,
            kappa,
            seed: 42,
        },
        &mut || 0,
    )
    .unwrap();
    assert!(
        !ghost_mask.is_kept(0, cg, ci),
        "saliency prunes the silent channel"
    );
    assert!(
        ghost_mask.is_kept(0, pg, pi),
        "saliency keeps the active channel"
    );

    let (mag_model, mag_mask, _) = sequential_prune(
        &weights,
        &calib,
        &PruneSettings {
            method: MethodTag::Magnitude,
            kappa,
            seed: 42,
        },
        &mut || 0,
    )
    .unwrap();
    assert!(
        !mag_mask.is_kept(0, pg, pi),
        "magnitude prunes the active channel"
    );
    assert!(
        mag_mask.is_kept(0, cg, ci),
        "magnitude keeps the silent channel"
    );

    // State-output damage: saliency-guided pruning is lossless here,
    // magnitude-guided pruning is not.
    let dense_y = layer_ssm_outputs(&weights, &calib, 0).unwrap();
    let ghost_y = layer_ssm_outputs(&ghost_model, &calib, 0).unwrap();
    let mag_y = layer_ssm_outputs(&mag_model, &calib, 0).unwrap();
    let mse = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / a.len() as f64
    };
    let ghost_mse = mse(&dense_y, &ghost_y);
    let mag_mse = mse(&dense_y, &mag_y);
    assert!(mag_mse > 0.0);
    assert!(
        ghost_mse * 2.0 <= mag_mse,
        "ghost mse {ghost_mse} vs magnitude mse {mag_mse}"
    );
}

#[test]
fn masked_output_differs_by_exactly_the_rank_one_term() {
    // Pruning channel (g, i) removes H[:, i] * c'[i] from the state
    // output and nothing else: the masked run equals the dense run minus
    // that term, to f64 re-association noise.
    use ghost_core::block::{block_forward_seq, BlockOptions};
    use ghost_core::model::embed_sequence;
    use ghost_core::pipeline::apply_mask;

    let cfg = small_config();
    let weights = random_model(&cfg, 61).unwrap().convert::<f64>();
    let tokens = random_tokens(cfg.vocab, 1, 24, 62).unwrap();
    let input = embed_sequence(&weights, tokens.sequence(0)).unwrap();
    let (group, channel) = (1, 3);

    let dense = block_forward_seq(
        &input,
        24,
        &weights.layers[0],
        &cfg,
        &BlockOptions {
            capture: true,
            keep_y_ssm: true,
            ..BlockOptions::default()
        },
    )
    .unwrap();
    let capture = dense.capture.unwrap();
    let dense_y = dense.y_ssm.unwrap();

    let mut keep = vec![true; cfg.channels_per_layer()];
    keep[group * cfg.state_dim + channel] = false;
    let masked_layer = apply_mask(&weights.layers[0], &cfg, &keep).unwrap();
    let masked = block_forward_seq(
        &input,
        24,
        &masked_layer,
        &cfg,
        &BlockOptions {
            keep_y_ssm: true,
            ..BlockOptions::default()
        },
    )
    .unwrap();
    let masked_y = masked.y_ssm.unwrap();

    for t in 0..24 {
        let c_prime = capture.c_prime_at(t)[group * cfg.state_dim + channel];
        for k in 0..cfg.heads_per_group() {
            let head = group * cfg.heads_per_group() + k;
            for p in 0..cfg.head_dim {
                let flat = (t * cfg.heads + head) * cfg.head_dim + p;
                let rank_one = capture.hidden_entry(t, head, p, channel) * c_prime;
                let expect = dense_y[flat] - rank_one;
                let scale = dense_y[flat].abs().max(1.0);
                assert!(
                    (masked_y[flat] - expect).abs() / scale < 1e-12,
                    "t={t} head={head} p={p}: {} vs {}",
                    masked_y[flat],
                    expect
                );
            }
        }
        // Heads outside the group are untouched bitwise.
        for head in 0..cfg.heads {
            if cfg.group_of_head(head) != group {
                for p in 0..cfg.head_dim {
                    let flat = (t * cfg.heads + head) * cfg.head_dim + p;
                    assert_eq!(masked_y[flat], dense_y[flat]);
                }
            }
        }
    }
}

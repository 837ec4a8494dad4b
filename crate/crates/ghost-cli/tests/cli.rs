//! End-to-end checks of the `ghost` binary and the file formats.

use std::path::Path;
use std::process::Command;

use ghost_cli::format::{load_model, save_model};
use ghost_core::ModelConfig;
use proptest::prelude::*;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_ghost")
}

fn write_calib(path: &Path, len: usize) {
    let mut bytes = Vec::with_capacity(len);
    let mut state = 5u32;
    for _ in 0..len {
        state = state.wrapping_mul(1664525).wrapping_add(1013904223);
        bytes.push((state >> 24) as u8);
    }
    std::fs::write(path, bytes).unwrap();
}

#[test]
fn unknown_flag_exits_nonzero_with_a_message() {
    let out = Command::new(bin()).arg("--bogus").output().unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}

#[test]
fn missing_model_file_exits_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let calib = dir.path().join("calib.txt");
    write_calib(&calib, 2048);
    let out = Command::new(bin())
        .args(["score", "--method", "ghost", "--out"])
        .arg(dir.path().join("scores.csv"))
        .arg("--model")
        .arg(dir.path().join("missing.ghm1"))
        .arg("--calib")
        .arg(&calib)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn unknown_method_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.ghm1");
    let calib = dir.path().join("calib.txt");
    write_calib(&calib, 2048);
    assert!(Command::new(bin())
        .args(["init", "--out"])
        .arg(&model)
        .output()
        .unwrap()
        .status
        .success());
    let out = Command::new(bin())
        .args(["score", "--method", "taylor", "--out"])
        .arg(dir.path().join("scores.csv"))
        .arg("--model")
        .arg(&model)
        .arg("--calib")
        .arg(&calib)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown method"));
}

#[test]
fn saved_model_reloads_and_resaves_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.ghm1");
    assert!(Command::new(bin())
        .args(["init", "--seed", "9", "--out"])
        .arg(&model)
        .output()
        .unwrap()
        .status
        .success());
    let original = std::fs::read(&model).unwrap();
    let weights = load_model(&model).unwrap();
    let resaved = dir.path().join("resaved.ghm1");
    save_model(&resaved, &weights).unwrap();
    assert_eq!(original, std::fs::read(&resaved).unwrap());
}

#[test]
fn zero_sparsity_prune_reproduces_the_input_file() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.ghm1");
    let calib = dir.path().join("calib.txt");
    write_calib(&calib, 1024);
    assert!(Command::new(bin())
        .args(["init", "--out"])
        .arg(&model)
        .output()
        .unwrap()
        .status
        .success());
    let out_model = dir.path().join("pruned.ghm1");
    let out = Command::new(bin())
        .args([
            "prune",
            "--method",
            "ghost",
            "--sparsity",
            "0",
            "--seq-len",
            "128",
        ])
        .args(["--max-samples", "4"])
        .arg("--model")
        .arg(&model)
        .arg("--calib")
        .arg(&calib)
        .arg("--out-model")
        .arg(&out_model)
        .arg("--out-mask")
        .arg(dir.path().join("mask.json"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(
        std::fs::read(&model).unwrap(),
        std::fs::read(&out_model).unwrap(),
        "a no-op prune must write the same bytes back"
    );
}

#[test]
fn score_csv_has_a_row_per_channel_for_every_method() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.ghm1");
    let calib = dir.path().join("calib.txt");
    write_calib(&calib, 2048);
    assert!(Command::new(bin())
        .args(["init", "--out"])
        .arg(&model)
        .output()
        .unwrap()
        .status
        .success());
    let cfg = ModelConfig::desk_default();
    for method in ["ghost", "ghost-p", "ghost-q", "magnitude"] {
        let csv = dir.path().join(format!("{method}.csv"));
        let out = Command::new(bin())
            .args(["score", "--method", method, "--sparsity", "0.5"])
            .args(["--seq-len", "128", "--max-samples", "4"])
            .arg("--model")
            .arg(&model)
            .arg("--calib")
            .arg(&calib)
            .arg("--out")
            .arg(&csv)
            .output()
            .unwrap();
        assert!(out.status.success());
        let text = std::fs::read_to_string(&csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "method,layer,group,channel,raw_sum,score,rank,kept"
        );
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), cfg.n_layers * cfg.channels_per_layer());
        assert!(rows.iter().all(|r| r.starts_with(method)));
        // Exactly half the channels are marked pruned at sparsity 0.5.
        let kept = rows.iter().filter(|r| r.ends_with("true")).count();
        assert_eq!(kept, rows.len() / 2);
    }
}

#[test]
fn eval_of_identical_models_reports_zero() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.ghm1");
    let eval_set = dir.path().join("eval.txt");
    write_calib(&eval_set, 1024);
    assert!(Command::new(bin())
        .args(["init", "--out"])
        .arg(&model)
        .output()
        .unwrap()
        .status
        .success());
    let out = Command::new(bin())
        .args(["eval", "--seq-len", "128", "--max-samples", "2"])
        .arg("--dense")
        .arg(&model)
        .arg("--pruned")
        .arg(&model)
        .arg("--eval-set")
        .arg(&eval_set)
        .output()
        .unwrap();
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["logit_mse"], 0.0);
    assert_eq!(report["mean_kl"], 0.0);
    assert_eq!(report["ce_delta"], 0.0);
}

#[test]
fn footprint_prints_the_reference_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("big.json");
    std::fs::write(
        &config,
        r#"{"model_dim":2048,"expand":2,"heads":64,"head_dim":64,"groups":1,"state_dim":128,"n_layers":48}"#,
    )
    .unwrap();
    let out = Command::new(bin())
        .args(["footprint", "--kappa", "0.5", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("2097152"), "{text}");
    assert!(text.contains("100663296"), "{text}");
    assert!(text.contains("1048576"), "{text}");
    assert!(text.contains("2.097 MB"), "{text}");
}

#[test]
fn oracle_checks_pass_and_unknown_checks_fail() {
    let out = Command::new(bin())
        .args(["oracle", "--check", "lti"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));

    let out = Command::new(bin())
        .args(["oracle", "--check", "bogus"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn oracle_identity_passes_on_the_default_config() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("identity.csv");
    let out = Command::new(bin())
        .args(["oracle", "--check", "identity", "--csv"])
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("identity check"), "{text}");
    assert!(text.contains("PASS"), "{text}");
    let table = std::fs::read_to_string(&csv).unwrap();
    let mut lines = table.lines();
    assert_eq!(
        lines.next().unwrap(),
        "layer,group,channel,bruteforce,predicted,rel_err"
    );
    // Desk default: 4 layers x 2 groups x 16 channels.
    assert_eq!(lines.count(), 128);
}

#[test]
fn prune_report_json_is_complete() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.ghm1");
    let calib = dir.path().join("calib.txt");
    write_calib(&calib, 2048);
    assert!(Command::new(bin())
        .args(["init", "--out"])
        .arg(&model)
        .output()
        .unwrap()
        .status
        .success());
    let report_path = dir.path().join("report.json");
    let out = Command::new(bin())
        .args([
            "prune",
            "--method",
            "magnitude",
            "--sparsity",
            "0.5",
            "--compact",
        ])
        .args(["--seq-len", "128", "--max-samples", "4"])
        .arg("--model")
        .arg(&model)
        .arg("--calib")
        .arg(&calib)
        .arg("--out-model")
        .arg(dir.path().join("pruned.ghm1"))
        .arg("--out-mask")
        .arg(dir.path().join("mask.json"))
        .arg("--out-report")
        .arg(&report_path)
        .output()
        .unwrap();
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&report_path).unwrap()).unwrap();
    assert_eq!(report["prune"]["achieved_sparsity"], 0.5);
    assert_eq!(
        report["prune"]["forward_passes_per_layer"],
        serde_json::json!([2, 2, 2, 2])
    );
    assert!(report["divergence"]["mean_kl"].as_f64().unwrap() >= 0.0);
    assert!(
        report["state_memory"]["compact_per_layer"]
            .as_u64()
            .unwrap()
            > 0
    );
    // Retained counts per group may differ under joint pooling, but must
    // sum to channels - pruned.
    let layer0 = &report["prune"]["layers"][0];
    let retained: u64 = layer0["retained_per_group"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(retained, 16);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]
    // Model files survive a write/read/write cycle byte-for-byte for any
    // valid architecture.
    #[test]
    fn model_files_round_trip(
        heads_pow in 1u32..3,
        state_dim in 2usize..9,
        n_layers in 0usize..3,
        seed in 0u64..1000,
    ) {
        let heads = 1usize << heads_pow;
        let cfg = ModelConfig {
            model_dim: heads * 2,
            expand: 2,
            heads,
            head_dim: 4,
            groups: heads / 2,
            state_dim,
            n_layers,
            conv_width: 3,
            vocab: 11,
            eps: 1e-5,
        };
        cfg.validate().unwrap();
        let weights = ghost_core::init::random_model(&cfg, seed).unwrap();
        let mut bytes = Vec::new();
        ghost_cli::format::write_model(&mut bytes, &weights).unwrap();
        let loaded = ghost_cli::format::read_model(bytes.as_slice()).unwrap();
        prop_assert_eq!(&loaded, &weights);
        let mut again = Vec::new();
        ghost_cli::format::write_model(&mut again, &loaded).unwrap();
        prop_assert_eq!(bytes, again);
    }
}

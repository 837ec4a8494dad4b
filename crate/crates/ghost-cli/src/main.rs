use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ghost_core::init::{random_model, random_tokens};
use ghost_core::oracle;
use ghost_core::pipeline::{sequential_prune, PruneSettings};
use ghost_core::scorer::{pool_and_threshold, LayerSelection, MethodTag};
use ghost_core::{ModelConfig, ModelWeights, Scalar, ScalarWidth, SequenceBatch};

use ghost_cli::calib::load_text_calibration;
use ghost_cli::eval::divergence;
use ghost_cli::export::{write_channel_loss_csv, write_score_csv, LayerScores};
use ghost_cli::format::{config_fingerprint, load_model, save_model};
use ghost_cli::maskfile::{save_mask, to_mask_file};
use ghost_cli::parallel::resolve_threads;
use ghost_cli::report::{print_footprint, print_run_report, FootprintReport, RunReport};
use ghost_cli::score::score_model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Precision {
    /// 32-bit compute.
    Fast,
    /// 64-bit compute; output files stay bit-reproducible.
    Oracle,
}

#[derive(Debug, Parser)]
#[command(
    name = "ghost",
    version,
    about = "Mamba2 state-space inference engine with data-driven structured state pruning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Compute precision for forward passes.
    #[arg(long, global = true, value_enum, default_value_t = Precision::Fast)]
    precision: Precision,

    /// Worker threads for batch forwarding in `score` and `eval`
    /// (default: GHOST_THREADS env var, else 1). `prune` runs
    /// single-threaded for bit reproducibility.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Seed for every random choice (model init, random masks,
    /// synthetic calibration).
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
}

#[derive(Debug, Args)]
struct CalibArgs {
    /// Text file chunked into non-overlapping byte windows.
    #[arg(long)]
    calib: PathBuf,
    /// Window length in tokens.
    #[arg(long, default_value_t = 256)]
    seq_len: usize,
    /// Maximum number of windows.
    #[arg(long, default_value_t = 8)]
    max_samples: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a randomly initialized model file.
    Init {
        /// Config JSON path; desk-scale defaults when omitted.
        #[arg(long)]
        config_json: Option<PathBuf>,
        /// Output model path (GHM1).
        #[arg(long)]
        out: PathBuf,
    },
    /// Score every state channel of every layer and export CSV.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        calib: CalibArgs,
        /// ghost | ghost-p | ghost-q | magnitude
        #[arg(long)]
        method: String,
        /// Target sparsity used only to fill the `kept` column.
        #[arg(long, default_value_t = 0.0)]
        sparsity: f64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sequentially score, mask and update each layer, then save the
    /// pruned model, the mask and a run report.
    Prune {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        calib: CalibArgs,
        /// ghost | ghost-p | ghost-q | magnitude | random
        #[arg(long)]
        method: String,
        /// Fraction of state channels to prune per layer.
        #[arg(long)]
        sparsity: f64,
        #[arg(long)]
        out_model: PathBuf,
        #[arg(long)]
        out_mask: PathBuf,
        #[arg(long)]
        out_report: Option<PathBuf>,
        /// Include the hypothetical compacted state-memory footprint in
        /// the report.
        #[arg(long)]
        compact: bool,
    },
    /// Compare a pruned model's outputs against the dense model.
    Eval {
        #[arg(long)]
        dense: PathBuf,
        #[arg(long)]
        pruned: PathBuf,
        /// Text file for evaluation windows.
        #[arg(long)]
        eval_set: PathBuf,
        #[arg(long, default_value_t = 256)]
        seq_len: usize,
        #[arg(long, default_value_t = 8)]
        max_samples: usize,
        /// Write the report JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a built-in consistency check and exit nonzero on failure.
    Oracle {
        /// identity | lti | phantom
        #[arg(long)]
        check: String,
        /// Config JSON for the synthetic model (desk default otherwise).
        #[arg(long)]
        config_json: Option<PathBuf>,
        /// For `identity`: also export the per-channel loss table.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Recurrent-state memory arithmetic for a config.
    Footprint {
        /// Config JSON path.
        #[arg(long)]
        config: PathBuf,
        /// Also show the footprint after compacting this fraction away.
        #[arg(long)]
        kappa: Option<f64>,
        /// Bytes per state scalar: 2, 4 or 8.
        #[arg(long, default_value_t = 4)]
        bytes: usize,
    },
}

fn load_config(path: &Path) -> Result<ModelConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let cfg: ModelConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_method(s: &str, allow_random: bool) -> Result<MethodTag> {
    match MethodTag::parse(s) {
        Some(MethodTag::Random) if !allow_random => {
            bail!("method `random` has no scores to export; use it with `prune`")
        }
        Some(tag) => Ok(tag),
        None => {
            bail!("unknown method `{s}` (expected ghost | ghost-p | ghost-q | magnitude | random)")
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => {}
        Ok(false) => std::process::exit(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(1);
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    let threads = resolve_threads(cli.threads);
    match cli.command {
        Command::Init { config_json, out } => {
            let cfg = match config_json {
                Some(path) => load_config(&path)?,
                None => ModelConfig::desk_default(),
            };
            let weights = random_model(&cfg, cli.seed)?;
            save_model(&out, &weights)?;
            println!(
                "wrote {} ({} layers, state dim {}, seed {})",
                out.display(),
                cfg.n_layers,
                cfg.state_dim,
                cli.seed
            );
            Ok(true)
        }
        Command::Score {
            model,
            calib,
            method,
            sparsity,
            out,
        } => {
            let method = parse_method(&method, false)?;
            let weights = load_model(&model)?;
            let set = load_text_calibration(
                &calib.calib,
                calib.seq_len,
                calib.max_samples,
                weights.config.vocab,
            )?;
            match cli.precision {
                Precision::Fast => {
                    run_score::<f32>(&weights, &set.batch, method, sparsity, threads, &out)?
                }
                Precision::Oracle => {
                    run_score::<f64>(&weights, &set.batch, method, sparsity, threads, &out)?
                }
            }
            println!(
                "scored {} layers over {} ({} -> {})",
                weights.config.n_layers,
                set.batch,
                method,
                out.display()
            );
            Ok(true)
        }
        Command::Prune {
            model,
            calib,
            method,
            sparsity,
            out_model,
            out_mask,
            out_report,
            compact,
        } => {
            let method = parse_method(&method, true)?;
            let weights = load_model(&model)?;
            let set = load_text_calibration(
                &calib.calib,
                calib.seq_len,
                calib.max_samples,
                weights.config.vocab,
            )?;
            let settings = PruneSettings {
                method,
                kappa: sparsity,
                seed: cli.seed,
            };
            let report = match cli.precision {
                Precision::Fast => run_prune::<f32>(
                    &weights, &set.batch, &settings, threads, compact, &out_model, &out_mask,
                )?,
                Precision::Oracle => run_prune::<f64>(
                    &weights, &set.batch, &settings, threads, compact, &out_model, &out_mask,
                )?,
            };
            if let Some(path) = out_report {
                std::fs::write(&path, serde_json::to_vec_pretty(&report)?)?;
            }
            print_run_report(std::io::stdout().lock(), &report)?;
            Ok(true)
        }
        Command::Eval {
            dense,
            pruned,
            eval_set,
            seq_len,
            max_samples,
            out,
        } => {
            let dense = load_model(&dense)?;
            let pruned = load_model(&pruned)?;
            let set = load_text_calibration(&eval_set, seq_len, max_samples, dense.config.vocab)?;
            let report = match cli.precision {
                Precision::Fast => {
                    divergence::<f32>(&dense.convert(), &pruned.convert(), &set.batch, threads)?
                }
                Precision::Oracle => {
                    divergence::<f64>(&dense.convert(), &pruned.convert(), &set.batch, threads)?
                }
            };
            let json = serde_json::to_string_pretty(&report)?;
            match out {
                Some(path) => std::fs::write(path, json)?,
                None => println!("{json}"),
            }
            Ok(true)
        }
        Command::Oracle {
            check,
            config_json,
            csv,
        } => {
            let cfg = match config_json {
                Some(path) => load_config(&path)?,
                None => ModelConfig::desk_default(),
            };
            match check.as_str() {
                "identity" => oracle_identity(&cfg, cli.seed, csv.as_deref()),
                "lti" => oracle_lti(cli.seed),
                "phantom" => oracle_phantom(&cfg, cli.seed),
                other => bail!("unknown check `{other}` (expected identity | lti | phantom)"),
            }
        }
        Command::Footprint {
            config,
            kappa,
            bytes,
        } => {
            let cfg = load_config(&config)?;
            let width = ScalarWidth::from_bytes(bytes)
                .with_context(|| format!("bytes must be 2, 4 or 8, got {bytes}"))?;
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            print_footprint(&mut w, &cfg.state_memory_bytes(width), "dense")?;
            if let Some(kappa) = kappa {
                let compact = cfg.state_memory_bytes_pruned(kappa, width)?;
                print_footprint(&mut w, &compact, &format!("kappa={kappa}"))?;
            }
            Ok(true)
        }
    }
}

fn run_score<T: Scalar>(
    weights32: &ModelWeights<f32>,
    batch: &SequenceBatch,
    method: MethodTag,
    sparsity: f64,
    threads: usize,
    out: &Path,
) -> Result<()> {
    let weights: ModelWeights<T> = weights32.convert();
    let cfg = &weights.config;
    let mut layers: Vec<(LayerScores, LayerSelection)> = Vec::with_capacity(cfg.n_layers);
    match method.scoring_mode() {
        Some(mode) => {
            let accs = score_model(&weights, batch, threads)?;
            for (j, acc) in accs.iter().enumerate() {
                let table = acc.finalize(j, mode)?;
                let selection = pool_and_threshold(&table, sparsity)?;
                layers.push(((&table).into(), selection));
            }
        }
        None => {
            for (j, layer) in weights.layers.iter().enumerate() {
                let table = ghost_core::baselines::magnitude_score(layer, cfg, j)?;
                let selection = ghost_core::baselines::magnitude_selection(&table, sparsity)?;
                layers.push(((&table).into(), selection));
            }
        }
    }
    let file = std::fs::File::create(out)?;
    let mut w = std::io::BufWriter::new(file);
    write_score_csv(&mut w, method, &layers)?;
    w.flush()?;
    Ok(())
}

fn run_prune<T: Scalar>(
    weights32: &ModelWeights<f32>,
    calib: &SequenceBatch,
    settings: &PruneSettings,
    threads: usize,
    compact: bool,
    out_model: &Path,
    out_mask: &Path,
) -> Result<RunReport> {
    let weights: ModelWeights<T> = weights32.convert();
    let start = Instant::now();
    let mut clock = move || start.elapsed().as_nanos() as u64;
    let (pruned, mask, prune_report) = sequential_prune(&weights, calib, settings, &mut clock)?;

    save_model(out_model, &pruned.convert::<f32>())?;
    let fingerprint = config_fingerprint(&weights.config);
    save_mask(out_mask, &to_mask_file(&mask, fingerprint))?;

    let div = divergence(&weights, &pruned, calib, threads)?;
    let state_memory = if compact {
        Some(FootprintReport::compute(
            &weights.config,
            settings.kappa,
            ScalarWidth::Single,
        )?)
    } else {
        None
    };
    Ok(RunReport {
        prune: prune_report,
        divergence: div,
        state_memory,
    })
}

fn oracle_identity(cfg: &ModelConfig, seed: u64, csv: Option<&Path>) -> Result<bool> {
    const TOLERANCE: f64 = 1e-9;
    let weights = random_model(cfg, seed)?.convert::<f64>();
    let calib = random_tokens(cfg.vocab, 8, 256, seed.wrapping_add(1))?;
    let mut tables = Vec::with_capacity(cfg.n_layers);
    let mut max_rel_err = 0.0f64;
    for layer in 0..cfg.n_layers {
        let table = oracle::channel_loss_table(&weights, layer, &calib)?;
        println!(
            "layer {layer}: {} channels, max rel err {:.3e}",
            table.rows.len(),
            table.max_rel_err
        );
        max_rel_err = max_rel_err.max(table.max_rel_err);
        tables.push(table);
    }
    if let Some(path) = csv {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        write_channel_loss_csv(&mut w, &tables)?;
        w.flush()?;
    }
    let pass = max_rel_err < TOLERANCE;
    println!(
        "identity check: max rel err {max_rel_err:.3e} (tolerance {TOLERANCE:.0e}): {}",
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(pass)
}

fn oracle_lti(seed: u64) -> Result<bool> {
    const TOLERANCE: f64 = 0.05;
    let analytic = oracle::analytic_lti_controllability(0.5, 1.0)?;
    let empirical = oracle::empirical_state_energy(0.5, 1.0, 100_000, 64, seed)?;
    let rel = (empirical - analytic).abs() / analytic;
    let pass = rel < TOLERANCE;
    println!(
        "lti check: analytic {analytic:.6}, empirical {empirical:.6}, rel err {rel:.4} (tolerance {TOLERANCE}): {}",
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(pass)
}

fn oracle_phantom(base: &ModelConfig, seed: u64) -> Result<bool> {
    let mut cfg = *base;
    cfg.n_layers = 1;
    let (weights32, planted) = oracle::build_phantom_scenario(&cfg, seed)?;
    let weights = weights32.convert::<f64>();
    let calib = random_tokens(cfg.vocab, 4, 64, seed.wrapping_add(1))?;
    let kappa = 1.0 / cfg.channels_per_layer() as f64;

    let (_, pg, pi) = planted.phantom;
    let (_, cg, ci) = planted.corporeal;
    let mut clock = || 0;
    let (ghost_model, ghost_mask, _) = sequential_prune(
        &weights,
        &calib,
        &PruneSettings {
            method: MethodTag::Ghost,
            kappa,
            seed,
        },
        &mut clock,
    )?;
    let (mag_model, mag_mask, _) = sequential_prune(
        &weights,
        &calib,
        &PruneSettings {
            method: MethodTag::Magnitude,
            kappa,
            seed,
        },
        &mut clock,
    )?;

    let dense_y = oracle::layer_ssm_outputs(&weights, &calib, 0)?;
    let ghost_y = oracle::layer_ssm_outputs(&ghost_model, &calib, 0)?;
    let mag_y = oracle::layer_ssm_outputs(&mag_model, &calib, 0)?;
    let mse = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / a.len() as f64
    };
    let ghost_mse = mse(&dense_y, &ghost_y);
    let mag_mse = mse(&dense_y, &mag_y);

    let saliency_right = !ghost_mask.is_kept(0, cg, ci) && ghost_mask.is_kept(0, pg, pi);
    let magnitude_fooled = !mag_mask.is_kept(0, pg, pi) && mag_mask.is_kept(0, cg, ci);
    let damage_separated = mag_mse > 0.0 && ghost_mse * 2.0 <= mag_mse;
    println!(
        "phantom check: planted phantom ({pg},{pi}), corporeal ({cg},{ci}); \
         saliency prunes corporeal: {saliency_right}; magnitude prunes phantom: {magnitude_fooled}; \
         state-output mse ghost {ghost_mse:.3e} vs magnitude {mag_mse:.3e}"
    );
    let pass = saliency_right && magnitude_fooled && damage_separated;
    println!("phantom check: {}", if pass { "PASS" } else { "FAIL" });
    Ok(pass)
}

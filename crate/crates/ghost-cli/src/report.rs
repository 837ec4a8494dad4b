//! Pruning run report: JSON artifact plus a human-readable table.

use std::io::{self, Write};

use ghost_core::pipeline::PruneReport;
use ghost_core::{MemoryFootprint, ModelConfig, ScalarWidth};
use serde::{Deserialize, Serialize};

use crate::eval::DivergenceReport;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FootprintReport {
    pub bytes_per_scalar: usize,
    pub dense_per_layer: u64,
    pub dense_total: u64,
    pub compact_per_layer: u64,
    pub compact_total: u64,
}

impl FootprintReport {
    /// Dense footprint next to the hypothetical footprint after
    /// compacting the pruned channels away. Soft pruning leaves shapes
    /// unchanged; this is what physical removal would save.
    pub fn compute(cfg: &ModelConfig, kappa: f64, width: ScalarWidth) -> ghost_core::Result<Self> {
        let dense = cfg.state_memory_bytes(width);
        let compact = cfg.state_memory_bytes_pruned(kappa, width)?;
        Ok(FootprintReport {
            bytes_per_scalar: width.bytes(),
            dense_per_layer: dense.per_layer,
            dense_total: dense.total,
            compact_per_layer: compact.per_layer,
            compact_total: compact.total,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub prune: PruneReport,
    /// Divergence of the pruned model from the dense one over the
    /// calibration set.
    pub divergence: DivergenceReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state_memory: Option<FootprintReport>,
}

fn mb(bytes: u64) -> f64 {
    bytes as f64 / 1e6
}

pub fn print_footprint<W: Write>(mut w: W, fp: &MemoryFootprint, label: &str) -> io::Result<()> {
    writeln!(
        w,
        "{label:<10} {:>14} B/layer ({:.3} MB)   {:>14} B total ({:.3} MB)",
        fp.per_layer,
        mb(fp.per_layer),
        fp.total,
        mb(fp.total)
    )
}

/// Human-readable run summary.
pub fn print_run_report<W: Write>(mut w: W, report: &RunReport) -> io::Result<()> {
    let p = &report.prune;
    writeln!(
        w,
        "method: {}   kappa: {}   seed: {}",
        p.method, p.kappa, p.seed
    )?;
    writeln!(w, "achieved sparsity: {:.6}", p.achieved_sparsity)?;
    writeln!(
        w,
        "phase wall-clock: scoring {:.3}s, selection {:.3}s, update {:.3}s",
        p.timings.scoring_nanos as f64 / 1e9,
        p.timings.selection_nanos as f64 / 1e9,
        p.timings.update_nanos as f64 / 1e9,
    )?;
    writeln!(
        w,
        "{:<6} {:>12} {:>8}  retained/group",
        "layer", "tau", "pruned"
    )?;
    for (j, layer) in p.layers.iter().enumerate() {
        let tau = match layer.tau {
            Some(t) => format!("{t:.6e}"),
            None => "-".into(),
        };
        let retained: Vec<String> = layer
            .retained_per_group
            .iter()
            .map(|r| r.to_string())
            .collect();
        writeln!(
            w,
            "{j:<6} {tau:>12} {:>8}  [{}]",
            layer.pruned_channels,
            retained.join(", ")
        )?;
    }
    let d = &report.divergence;
    writeln!(
        w,
        "divergence vs dense: logit mse {:.6e}, mean KL {:.6e}, ce delta {:.6e}",
        d.logit_mse, d.mean_kl, d.ce_delta
    )?;
    if let Some(fp) = &report.state_memory {
        writeln!(
            w,
            "state memory ({} B/scalar): dense {} B/layer ({:.3} MB), compacted {} B/layer ({:.3} MB)",
            fp.bytes_per_scalar,
            fp.dense_per_layer,
            mb(fp.dense_per_layer),
            fp.compact_per_layer,
            mb(fp.compact_per_layer),
        )?;
    }
    Ok(())
}

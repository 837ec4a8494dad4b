//! CSV exports. Plain formatting on purpose: '.' decimal separator, LF
//! line endings, a header row, shortest-round-trip float rendering — the
//! files are stable enough to diff in golden tests and feed to plotting
//! scripts (sorted-score elbow curves, per-layer score heat maps).

use std::io::{self, Write};

use ghost_core::baselines::StaticScoreTable;
use ghost_core::oracle::ChannelLossTable;
use ghost_core::scorer::{LayerSelection, MethodTag, SaliencyTable};

/// One layer's rows for the score CSV, whatever scored it.
pub struct LayerScores {
    pub layer: usize,
    pub groups: usize,
    pub state_dim: usize,
    pub raw: Vec<f64>,
    pub scores: Vec<f64>,
}

impl From<&SaliencyTable> for LayerScores {
    fn from(t: &SaliencyTable) -> Self {
        LayerScores {
            layer: t.layer,
            groups: t.groups,
            state_dim: t.state_dim,
            raw: t.raw.clone(),
            scores: t.scores.clone(),
        }
    }
}

impl From<&StaticScoreTable> for LayerScores {
    fn from(t: &StaticScoreTable) -> Self {
        LayerScores {
            layer: t.layer,
            groups: t.groups,
            state_dim: t.state_dim,
            raw: t.raw.clone(),
            scores: t.scores.clone(),
        }
    }
}

/// `method,layer,group,channel,raw_sum,score,rank,kept`
///
/// Rank is the pruning order within the layer: 0 is the first channel
/// pruned (lowest raw sum, ties by group then channel).
pub fn write_score_csv<W: Write>(
    mut w: W,
    method: MethodTag,
    layers: &[(LayerScores, LayerSelection)],
) -> io::Result<()> {
    writeln!(w, "method,layer,group,channel,raw_sum,score,rank,kept")?;
    for (scores, selection) in layers {
        let channels = scores.groups * scores.state_dim;
        let mut order: Vec<usize> = (0..channels).collect();
        order.sort_unstable_by(|&a, &b| {
            scores.raw[a]
                .total_cmp(&scores.raw[b])
                .then_with(|| a.cmp(&b))
        });
        let mut rank = vec![0usize; channels];
        for (r, &flat) in order.iter().enumerate() {
            rank[flat] = r;
        }
        for g in 0..scores.groups {
            for i in 0..scores.state_dim {
                let flat = g * scores.state_dim + i;
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{}",
                    method,
                    scores.layer,
                    g,
                    i,
                    scores.raw[flat],
                    scores.scores[flat],
                    rank[flat],
                    selection.keep[flat],
                )?;
            }
        }
    }
    Ok(())
}

/// `layer,group,channel,bruteforce,predicted,rel_err`
pub fn write_channel_loss_csv<W: Write>(mut w: W, tables: &[ChannelLossTable]) -> io::Result<()> {
    writeln!(w, "layer,group,channel,bruteforce,predicted,rel_err")?;
    for table in tables {
        for row in &table.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                table.layer, row.group, row.channel, row.measured, row.predicted, row.rel_err
            )?;
        }
    }
    Ok(())
}

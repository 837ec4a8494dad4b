//! Model architecture dimensions and the recurrent-state memory arithmetic.

// Required for f64 math in no_std builds; builds that link std (tests,
// feature-unified dev graphs) resolve the same calls inherently instead.
use alloc::format;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture dimensions of a model.
///
/// The expanded dimension `R = expand * model_dim` must equal
/// `heads * head_dim`, and heads are partitioned into `groups` of
/// `heads / groups` heads each, every group sharing one pair of dynamics
/// projections. `heads_per_group` is always derived, never stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Residual-stream width (`M`).
    pub model_dim: usize,
    /// Expansion factor (`E`).
    #[serde(default = "default_expand")]
    pub expand: usize,
    /// Number of heads (`H`).
    pub heads: usize,
    /// Per-head channel count (`P`).
    pub head_dim: usize,
    /// Number of dynamics groups (`G`).
    pub groups: usize,
    /// Recurrent state width per channel (`N`) — the pruning target.
    pub state_dim: usize,
    /// Number of residual blocks. Zero is allowed for degenerate
    /// embed-then-unembed models used in tests.
    pub n_layers: usize,
    /// Depthwise convolution kernel width.
    #[serde(default = "default_conv_width")]
    pub conv_width: usize,
    /// Token vocabulary size (byte-level by default).
    #[serde(default = "default_vocab")]
    pub vocab: usize,
    /// RMSNorm stabilizer.
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_expand() -> usize {
    2
}
fn default_conv_width() -> usize {
    4
}
fn default_vocab() -> usize {
    256
}
fn default_eps() -> f64 {
    1e-5
}

impl ModelConfig {
    /// Desk-scale default used by the CLI and the test suites.
    pub fn desk_default() -> Self {
        ModelConfig {
            model_dim: 64,
            expand: 2,
            heads: 8,
            head_dim: 16,
            groups: 2,
            state_dim: 16,
            n_layers: 4,
            conv_width: 4,
            vocab: 256,
            eps: 1e-5,
        }
    }

    /// Expanded dimension `R = E * M = H * P`.
    #[inline]
    pub fn expanded_dim(&self) -> usize {
        self.expand * self.model_dim
    }

    /// Heads per group `K = H / G`.
    #[inline]
    pub fn heads_per_group(&self) -> usize {
        self.heads / self.groups
    }

    /// Group owning head `h`.
    #[inline]
    pub fn group_of_head(&self, head: usize) -> usize {
        head / self.heads_per_group()
    }

    /// Total state channels per layer, `G * N`.
    #[inline]
    pub fn channels_per_layer(&self) -> usize {
        self.groups * self.state_dim
    }

    /// Output rows of the input projection: `[z; x; B; C; dt]`.
    #[inline]
    pub fn proj_rows(&self) -> usize {
        2 * self.expanded_dim() + 2 * self.channels_per_layer() + self.heads
    }

    /// Channels fed through the depthwise convolution: `[x; B; C]`.
    #[inline]
    pub fn conv_channels(&self) -> usize {
        self.expanded_dim() + 2 * self.channels_per_layer()
    }

    /// Offsets of the five projection slices, in row order.
    #[inline]
    pub fn z_offset(&self) -> usize {
        0
    }
    #[inline]
    pub fn x_offset(&self) -> usize {
        self.expanded_dim()
    }
    #[inline]
    pub fn b_offset(&self) -> usize {
        2 * self.expanded_dim()
    }
    #[inline]
    pub fn c_offset(&self) -> usize {
        2 * self.expanded_dim() + self.channels_per_layer()
    }
    #[inline]
    pub fn dt_offset(&self) -> usize {
        2 * self.expanded_dim() + 2 * self.channels_per_layer()
    }

    /// Offsets of the B and C blocks inside the conv channel layout.
    #[inline]
    pub fn conv_b_offset(&self) -> usize {
        self.expanded_dim()
    }
    #[inline]
    pub fn conv_c_offset(&self) -> usize {
        self.expanded_dim() + self.channels_per_layer()
    }

    pub fn validate(&self) -> Result<()> {
        let positive: [(&str, usize); 8] = [
            ("model_dim", self.model_dim),
            ("expand", self.expand),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("groups", self.groups),
            ("state_dim", self.state_dim),
            ("conv_width", self.conv_width),
            ("vocab", self.vocab),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.heads % self.groups != 0 {
            return Err(Error::InvalidConfig(format!(
                "heads ({}) must be divisible by groups ({})",
                self.heads, self.groups
            )));
        }
        if self.expand * self.model_dim != self.heads * self.head_dim {
            return Err(Error::InvalidConfig(format!(
                "expand*model_dim ({}) must equal heads*head_dim ({})",
                self.expand * self.model_dim,
                self.heads * self.head_dim
            )));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "eps must be a small positive real, got {}",
                self.eps
            )));
        }
        Ok(())
    }

    /// Bytes held by the recurrent state `H x P x N` of one layer, and of
    /// the whole model.
    pub fn state_memory_bytes(&self, width: ScalarWidth) -> MemoryFootprint {
        let per_layer = (self.heads * self.head_dim * self.state_dim) as u64 * width.bytes() as u64;
        MemoryFootprint {
            per_layer,
            total: per_layer * self.n_layers as u64,
        }
    }

    /// Hypothetical state footprint after compacting a fraction `kappa` of
    /// state channels away: exactly `floor(kappa * G * N)` channels per
    /// layer are removed, each worth `K * P` state scalars.
    pub fn state_memory_bytes_pruned(
        &self,
        kappa: f64,
        width: ScalarWidth,
    ) -> Result<MemoryFootprint> {
        if !(0.0..=1.0).contains(&kappa) {
            return Err(Error::InvalidParameter {
                name: "kappa",
                value: kappa,
                constraint: "0 <= kappa <= 1",
            });
        }
        let pruned = (kappa * self.channels_per_layer() as f64).floor() as usize;
        let retained = self.channels_per_layer() - pruned;
        let per_layer =
            (self.heads_per_group() * self.head_dim * retained) as u64 * width.bytes() as u64;
        Ok(MemoryFootprint {
            per_layer,
            total: per_layer * self.n_layers as u64,
        })
    }
}

/// Storage width of one state scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalarWidth {
    Half,
    Single,
    Double,
}

impl ScalarWidth {
    pub fn bytes(self) -> usize {
        match self {
            ScalarWidth::Half => 2,
            ScalarWidth::Single => 4,
            ScalarWidth::Double => 8,
        }
    }

    pub fn from_bytes(bytes: usize) -> Option<Self> {
        match bytes {
            2 => Some(ScalarWidth::Half),
            4 => Some(ScalarWidth::Single),
            8 => Some(ScalarWidth::Double),
            _ => None,
        }
    }
}

/// Recurrent-state memory, in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryFootprint {
    pub per_layer: u64,
    pub total: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_default_is_consistent() {
        let cfg = ModelConfig::desk_default();
        cfg.validate().unwrap();
        assert_eq!(cfg.expanded_dim(), 128);
        assert_eq!(cfg.heads_per_group(), 4);
        assert_eq!(cfg.proj_rows(), 2 * 128 + 2 * 32 + 8);
        assert_eq!(cfg.conv_channels(), 128 + 64);
        assert_eq!(cfg.group_of_head(3), 0);
        assert_eq!(cfg.group_of_head(4), 1);
    }

    #[test]
    fn slice_offsets_partition_proj_rows() {
        let cfg = ModelConfig::desk_default();
        assert_eq!(cfg.z_offset(), 0);
        assert_eq!(cfg.x_offset(), 128);
        assert_eq!(cfg.b_offset(), 256);
        assert_eq!(cfg.c_offset(), 288);
        assert_eq!(cfg.dt_offset(), 320);
        assert_eq!(cfg.dt_offset() + cfg.heads, cfg.proj_rows());
    }

    #[test]
    fn rejects_inconsistent_dims() {
        let mut cfg = ModelConfig::desk_default();
        cfg.head_dim = 17;
        assert!(cfg.validate().is_err());

        let mut cfg = ModelConfig::desk_default();
        cfg.groups = 3;
        assert!(cfg.validate().is_err());

        let mut cfg = ModelConfig::desk_default();
        cfg.eps = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn reference_state_memory() {
        // The 1.3B-scale layout: 64 heads of dim 64 with a 128-wide state.
        let cfg = ModelConfig {
            model_dim: 2048,
            expand: 2,
            heads: 64,
            head_dim: 64,
            groups: 1,
            state_dim: 128,
            n_layers: 48,
            conv_width: 4,
            vocab: 256,
            eps: 1e-5,
        };
        cfg.validate().unwrap();
        let fp = cfg.state_memory_bytes(ScalarWidth::Single);
        assert_eq!(fp.per_layer, 2_097_152);
        assert_eq!(fp.total, 100_663_296);

        // Halving the state width halves the footprint exactly.
        let half = cfg
            .state_memory_bytes_pruned(0.5, ScalarWidth::Single)
            .unwrap();
        assert_eq!(half.per_layer, fp.per_layer / 2);
        assert_eq!(half.total, fp.total / 2);
    }

    #[test]
    fn serde_defaults_fill_optional_fields() {
        let cfg: ModelConfig = serde_json::from_str(
            r#"{"model_dim":64,"heads":8,"head_dim":16,"groups":2,"state_dim":16,"n_layers":4}"#,
        )
        .unwrap();
        assert_eq!(cfg.expand, 2);
        assert_eq!(cfg.conv_width, 4);
        assert_eq!(cfg.vocab, 256);
        assert_eq!(cfg.eps, 1e-5);
        cfg.validate().unwrap();
    }
}

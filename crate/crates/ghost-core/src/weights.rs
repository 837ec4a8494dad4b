//! Model parameters and token batches.

use alloc::string::String;
use alloc::vec::Vec;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Parameters of one residual block.
///
/// `w_in` is row-major `(2R + 2GN + H) x M` with the fixed output row order
/// `[z; x; B; C; dt]`. `conv_filters` is row-major `(R + 2GN) x conv_width`,
/// one filter per channel of the concatenated `[x; B; C]` stream.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    pub norm_gamma: Vec<T>,     // M
    pub w_in: Vec<T>,           // proj_rows x M
    pub b_in: Vec<T>,           // proj_rows
    pub conv_filters: Vec<T>,   // conv_channels x conv_width
    pub conv_bias: Vec<T>,      // conv_channels
    pub a_log: Vec<T>,          // H; effective decay rate is -exp(a_log)
    pub d: Vec<T>,              // H, feedthrough
    pub out_norm_gamma: Vec<T>, // R
    pub w_out: Vec<T>,          // M x R
    pub b_out: Vec<T>,          // M
}

impl<T: Scalar> LayerWeights<T> {
    /// All-zero parameters with the right shapes. Useful as a scaffold.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let m = cfg.model_dim;
        let r = cfg.expanded_dim();
        LayerWeights {
            norm_gamma: alloc::vec![T::zero(); m],
            w_in: alloc::vec![T::zero(); cfg.proj_rows() * m],
            b_in: alloc::vec![T::zero(); cfg.proj_rows()],
            conv_filters: alloc::vec![T::zero(); cfg.conv_channels() * cfg.conv_width],
            conv_bias: alloc::vec![T::zero(); cfg.conv_channels()],
            a_log: alloc::vec![T::zero(); cfg.heads],
            d: alloc::vec![T::zero(); cfg.heads],
            out_norm_gamma: alloc::vec![T::zero(); r],
            w_out: alloc::vec![T::zero(); m * r],
            b_out: alloc::vec![T::zero(); m],
        }
    }

    /// Row of `w_in` producing the B entry of `(group, channel)`.
    #[inline]
    pub fn b_row_index(cfg: &ModelConfig, group: usize, channel: usize) -> usize {
        cfg.b_offset() + group * cfg.state_dim + channel
    }

    /// Row of `w_in` producing the C entry of `(group, channel)`.
    #[inline]
    pub fn c_row_index(cfg: &ModelConfig, group: usize, channel: usize) -> usize {
        cfg.c_offset() + group * cfg.state_dim + channel
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let m = cfg.model_dim;
        let r = cfg.expanded_dim();
        let checks: [(&'static str, usize, usize); 10] = [
            ("norm_gamma", self.norm_gamma.len(), m),
            ("w_in", self.w_in.len(), cfg.proj_rows() * m),
            ("b_in", self.b_in.len(), cfg.proj_rows()),
            (
                "conv_filters",
                self.conv_filters.len(),
                cfg.conv_channels() * cfg.conv_width,
            ),
            ("conv_bias", self.conv_bias.len(), cfg.conv_channels()),
            ("a_log", self.a_log.len(), cfg.heads),
            ("d", self.d.len(), cfg.heads),
            ("out_norm_gamma", self.out_norm_gamma.len(), r),
            ("w_out", self.w_out.len(), m * r),
            ("b_out", self.b_out.len(), m),
        ];
        for (tensor, got, expected) in checks {
            if got != expected {
                return Err(Error::DimensionMismatch {
                    tensor,
                    expected,
                    got,
                });
            }
        }
        for (name, data) in self.tensors() {
            check_finite(name, data)?;
        }
        Ok(())
    }

    /// Named views of every tensor, in the canonical serialization order.
    pub fn tensors(&self) -> [(&'static str, &[T]); 10] {
        [
            ("norm_gamma", self.norm_gamma.as_slice()),
            ("w_in", self.w_in.as_slice()),
            ("b_in", self.b_in.as_slice()),
            ("conv_filters", self.conv_filters.as_slice()),
            ("conv_bias", self.conv_bias.as_slice()),
            ("a_log", self.a_log.as_slice()),
            ("d", self.d.as_slice()),
            ("out_norm_gamma", self.out_norm_gamma.as_slice()),
            ("w_out", self.w_out.as_slice()),
            ("b_out", self.b_out.as_slice()),
        ]
    }

    pub fn convert<U: Scalar>(&self) -> LayerWeights<U> {
        LayerWeights {
            norm_gamma: convert_vec(&self.norm_gamma),
            w_in: convert_vec(&self.w_in),
            b_in: convert_vec(&self.b_in),
            conv_filters: convert_vec(&self.conv_filters),
            conv_bias: convert_vec(&self.conv_bias),
            a_log: convert_vec(&self.a_log),
            d: convert_vec(&self.d),
            out_norm_gamma: convert_vec(&self.out_norm_gamma),
            w_out: convert_vec(&self.w_out),
            b_out: convert_vec(&self.b_out),
        }
    }
}

fn convert_vec<T: Scalar, U: Scalar>(v: &[T]) -> Vec<U> {
    v.iter().map(|&x| U::from_f64(x.as_f64())).collect()
}

pub(crate) fn check_finite<T: Scalar>(tensor: &str, data: &[T]) -> Result<()> {
    for (index, v) in data.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                tensor: String::from(tensor),
                index,
            });
        }
    }
    Ok(())
}

/// Full model: tied byte-level embedding, residual blocks, final norm.
/// The unembedding head is the transpose of `embedding`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T> {
    pub config: ModelConfig,
    pub embedding: Vec<T>, // vocab x M
    pub layers: Vec<LayerWeights<T>>,
    pub final_norm_gamma: Vec<T>, // M
}

impl<T: Scalar> ModelWeights<T> {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.layers.len() != self.config.n_layers {
            return Err(Error::DimensionMismatch {
                tensor: "layers",
                expected: self.config.n_layers,
                got: self.layers.len(),
            });
        }
        if self.embedding.len() != self.config.vocab * self.config.model_dim {
            return Err(Error::DimensionMismatch {
                tensor: "embedding",
                expected: self.config.vocab * self.config.model_dim,
                got: self.embedding.len(),
            });
        }
        if self.final_norm_gamma.len() != self.config.model_dim {
            return Err(Error::DimensionMismatch {
                tensor: "final_norm_gamma",
                expected: self.config.model_dim,
                got: self.final_norm_gamma.len(),
            });
        }
        check_finite("embedding", &self.embedding)?;
        check_finite("final_norm_gamma", &self.final_norm_gamma)?;
        for layer in &self.layers {
            layer.validate(&self.config)?;
        }
        Ok(())
    }

    pub fn convert<U: Scalar>(&self) -> ModelWeights<U> {
        ModelWeights {
            config: self.config,
            embedding: convert_vec(&self.embedding),
            layers: self.layers.iter().map(LayerWeights::convert).collect(),
            final_norm_gamma: convert_vec(&self.final_norm_gamma),
        }
    }

    /// Embedding row for one token.
    #[inline]
    pub fn embedding_row(&self, token: u32) -> &[T] {
        let m = self.config.model_dim;
        &self.embedding[token as usize * m..(token as usize + 1) * m]
    }
}

/// A rectangular batch of equal-length token sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    tokens: Vec<u32>,
    batch: usize,
    seq_len: usize,
}

impl SequenceBatch {
    pub fn from_rows(rows: &[Vec<u32>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyCalibration);
        }
        let seq_len = rows[0].len();
        if seq_len == 0 {
            return Err(Error::InvalidConfig(String::from(
                "sequence length must be at least 1",
            )));
        }
        let mut tokens = Vec::with_capacity(rows.len() * seq_len);
        for (index, row) in rows.iter().enumerate() {
            if row.len() != seq_len {
                return Err(Error::RaggedBatch {
                    index,
                    got: row.len(),
                    expected: seq_len,
                });
            }
            tokens.extend_from_slice(row);
        }
        Ok(SequenceBatch {
            tokens,
            batch: rows.len(),
            seq_len,
        })
    }

    pub fn from_flat(tokens: Vec<u32>, batch: usize, seq_len: usize) -> Result<Self> {
        if batch == 0 || seq_len == 0 {
            return Err(Error::EmptyCalibration);
        }
        if tokens.len() != batch * seq_len {
            return Err(Error::DimensionMismatch {
                tensor: "tokens",
                expected: batch * seq_len,
                got: tokens.len(),
            });
        }
        Ok(SequenceBatch {
            tokens,
            batch,
            seq_len,
        })
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.batch
    }

    #[inline]
    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    #[inline]
    pub fn sequence(&self, index: usize) -> &[u32] {
        &self.tokens[index * self.seq_len..(index + 1) * self.seq_len]
    }

    pub fn sequences(&self) -> impl Iterator<Item = &[u32]> {
        (0..self.batch).map(move |b| self.sequence(b))
    }

    /// Every token checked against the vocabulary bound.
    pub fn validate_tokens(&self, vocab: usize) -> Result<()> {
        for (position, &token) in self.tokens.iter().enumerate() {
            if token as usize >= vocab {
                return Err(Error::TokenOutOfRange {
                    position,
                    token,
                    vocab,
                });
            }
        }
        Ok(())
    }

    /// Take only the first `n` sequences.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.batch {
            return Err(Error::InvalidParameter {
                name: "n",
                value: n as f64,
                constraint: "1 <= n <= batch",
            });
        }
        Ok(SequenceBatch {
            tokens: self.tokens[..n * self.seq_len].to_vec(),
            batch: n,
            seq_len: self.seq_len,
        })
    }
}

impl core::fmt::Display for SequenceBatch {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{} sequences of length {}", self.batch, self.seq_len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn ragged_batches_are_rejected() {
        let err = SequenceBatch::from_rows(&[vec![1, 2, 3], vec![1, 2]]).unwrap_err();
        assert!(matches!(
            err,
            Error::RaggedBatch {
                index: 1,
                got: 2,
                expected: 3
            }
        ));
    }

    #[test]
    fn empty_batches_are_rejected() {
        assert!(SequenceBatch::from_rows(&[]).is_err());
        assert!(SequenceBatch::from_flat(vec![], 0, 4).is_err());
    }

    #[test]
    fn sequences_round_trip() {
        let batch = SequenceBatch::from_rows(&[vec![1, 2], vec![3, 4], vec![5, 6]]).unwrap();
        assert_eq!(batch.batch(), 3);
        assert_eq!(batch.seq_len(), 2);
        assert_eq!(batch.sequence(1), &[3, 4]);
        let b2 = batch.truncated(2).unwrap();
        assert_eq!(b2.batch(), 2);
        assert_eq!(b2.sequence(1), &[3, 4]);
    }

    #[test]
    fn token_range_validation() {
        let batch = SequenceBatch::from_rows(&[vec![0, 255]]).unwrap();
        batch.validate_tokens(256).unwrap();
        assert!(matches!(
            batch.validate_tokens(200),
            Err(Error::TokenOutOfRange {
                position: 1,
                token: 255,
                vocab: 200
            })
        ));
    }

    #[test]
    fn zero_layer_weights_validate() {
        let cfg = ModelConfig::desk_default();
        let layer = LayerWeights::<f64>::zeros(&cfg);
        layer.validate(&cfg).unwrap();
    }

    #[test]
    fn non_finite_weights_are_rejected() {
        let cfg = ModelConfig::desk_default();
        let mut layer = LayerWeights::<f64>::zeros(&cfg);
        layer.w_in[7] = f64::NAN;
        let err = layer.validate(&cfg).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 7, .. }));
    }
}

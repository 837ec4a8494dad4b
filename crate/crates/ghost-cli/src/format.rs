//! GHM1 model file format.
//!
//! Layout: 4-byte magic `GHM1`, a little-endian `u32` header length, a
//! UTF-8 JSON header `{config, tensors: [{name, shape, offset}]}`, then
//! raw little-endian `f32` blobs packed in directory order. Offsets are
//! relative to the start of the data section. The loader validates the
//! magic, every shape product, offset contiguity and finiteness.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ghost_core::{ModelConfig, ModelWeights};
use serde::{Deserialize, Serialize};

pub const MAGIC: [u8; 4] = *b"GHM1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected GHM1")]
    BadMagic,
    #[error("header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("header length {0} is implausible")]
    HeaderLength(u32),
    #[error("tensor {name}: shape product {product} does not match {len} stored values")]
    ShapeMismatch {
        name: String,
        product: usize,
        len: usize,
    },
    #[error("tensor {name}: offset {got}, expected {expected}")]
    BadOffset {
        name: String,
        expected: u64,
        got: u64,
    },
    #[error("tensor {name}: non-finite value at index {index}")]
    NonFinite { name: String, index: usize },
    #[error("unexpected tensor directory: {0}")]
    Directory(String),
    #[error("trailing bytes after the last tensor")]
    TrailingBytes,
    #[error(transparent)]
    Model(#[from] ghost_core::Error),
}

/// Tensor directory in canonical order: names, shapes and borrowed data.
fn directory(weights: &ModelWeights<f32>) -> Vec<(String, Vec<usize>, &[f32])> {
    let cfg = &weights.config;
    let m = cfg.model_dim;
    let r = cfg.expanded_dim();
    let mut dir: Vec<(String, Vec<usize>, &[f32])> = Vec::new();
    dir.push((
        "embedding".into(),
        vec![cfg.vocab, m],
        weights.embedding.as_slice(),
    ));
    for (i, layer) in weights.layers.iter().enumerate() {
        let shapes: [(&str, Vec<usize>, &[f32]); 10] = [
            ("norm_gamma", vec![m], &layer.norm_gamma),
            ("w_in", vec![cfg.proj_rows(), m], &layer.w_in),
            ("b_in", vec![cfg.proj_rows()], &layer.b_in),
            (
                "conv_filters",
                vec![cfg.conv_channels(), cfg.conv_width],
                &layer.conv_filters,
            ),
            ("conv_bias", vec![cfg.conv_channels()], &layer.conv_bias),
            ("a_log", vec![cfg.heads], &layer.a_log),
            ("d", vec![cfg.heads], &layer.d),
            ("out_norm_gamma", vec![r], &layer.out_norm_gamma),
            ("w_out", vec![m, r], &layer.w_out),
            ("b_out", vec![m], &layer.b_out),
        ];
        for (name, shape, data) in shapes {
            dir.push((format!("layers.{i}.{name}"), shape, data));
        }
    }
    dir.push((
        "final_norm_gamma".into(),
        vec![m],
        weights.final_norm_gamma.as_slice(),
    ));
    dir
}

pub fn write_model<W: Write>(mut w: W, weights: &ModelWeights<f32>) -> Result<(), FormatError> {
    weights.validate()?;
    let dir = directory(weights);
    let mut offset = 0u64;
    let tensors: Vec<TensorEntry> = dir
        .iter()
        .map(|(name, shape, data)| {
            let entry = TensorEntry {
                name: name.clone(),
                shape: shape.clone(),
                offset,
            };
            offset += 4 * data.len() as u64;
            entry
        })
        .collect();
    let header = serde_json::to_vec(&Header {
        config: weights.config,
        tensors,
    })?;

    w.write_all(&MAGIC)?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    let mut buf = Vec::with_capacity(1 << 16);
    for (_, _, data) in &dir {
        buf.clear();
        for v in *data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<ModelWeights<f32>, FormatError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)?;
    let header_len = u32::from_le_bytes(len_bytes);
    if header_len == 0 || header_len > 1 << 26 {
        return Err(FormatError::HeaderLength(header_len));
    }
    let mut header_bytes = vec![0u8; header_len as usize];
    r.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)?;
    header.config.validate()?;

    // The directory must match the canonical layout for this config.
    let scaffold = empty_model(&header.config);
    let expected = directory(&scaffold);
    if header.tensors.len() != expected.len() {
        return Err(FormatError::Directory(format!(
            "expected {} tensors, found {}",
            expected.len(),
            header.tensors.len()
        )));
    }

    let mut offset = 0u64;
    let mut blobs: Vec<Vec<f32>> = Vec::with_capacity(header.tensors.len());
    for (entry, (name, shape, data)) in header.tensors.iter().zip(expected.iter()) {
        if &entry.name != name {
            return Err(FormatError::Directory(format!(
                "expected tensor {name}, found {}",
                entry.name
            )));
        }
        if &entry.shape != shape {
            return Err(FormatError::Directory(format!(
                "tensor {name}: unexpected shape {:?}",
                entry.shape
            )));
        }
        let product: usize = entry.shape.iter().product();
        if product != data.len() {
            return Err(FormatError::ShapeMismatch {
                name: entry.name.clone(),
                product,
                len: data.len(),
            });
        }
        if entry.offset != offset {
            return Err(FormatError::BadOffset {
                name: entry.name.clone(),
                expected: offset,
                got: entry.offset,
            });
        }
        let mut bytes = vec![0u8; product * 4];
        r.read_exact(&mut bytes)?;
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(FormatError::NonFinite {
                name: entry.name.clone(),
                index,
            });
        }
        offset += 4 * product as u64;
        blobs.push(values);
    }
    let mut one = [0u8; 1];
    if r.read(&mut one)? != 0 {
        return Err(FormatError::TrailingBytes);
    }

    let weights = assemble(&header.config, blobs);
    weights.validate()?;
    Ok(weights)
}

fn empty_model(cfg: &ModelConfig) -> ModelWeights<f32> {
    ModelWeights {
        config: *cfg,
        embedding: vec![0.0; cfg.vocab * cfg.model_dim],
        layers: (0..cfg.n_layers)
            .map(|_| ghost_core::LayerWeights::zeros(cfg))
            .collect(),
        final_norm_gamma: vec![0.0; cfg.model_dim],
    }
}

fn assemble(cfg: &ModelConfig, mut blobs: Vec<Vec<f32>>) -> ModelWeights<f32> {
    // Blobs arrive in directory order; drain front to back.
    let mut it = blobs.drain(..);
    let embedding = it.next().expect("embedding blob");
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for _ in 0..cfg.n_layers {
        layers.push(ghost_core::LayerWeights {
            norm_gamma: it.next().expect("norm_gamma"),
            w_in: it.next().expect("w_in"),
            b_in: it.next().expect("b_in"),
            conv_filters: it.next().expect("conv_filters"),
            conv_bias: it.next().expect("conv_bias"),
            a_log: it.next().expect("a_log"),
            d: it.next().expect("d"),
            out_norm_gamma: it.next().expect("out_norm_gamma"),
            w_out: it.next().expect("w_out"),
            b_out: it.next().expect("b_out"),
        });
    }
    let final_norm_gamma = it.next().expect("final_norm_gamma");
    ModelWeights {
        config: *cfg,
        embedding,
        layers,
        final_norm_gamma,
    }
}

pub fn save_model(path: &Path, weights: &ModelWeights<f32>) -> Result<(), FormatError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    write_model(&mut w, weights)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelWeights<f32>, FormatError> {
    let file = File::open(path)?;
    read_model(BufReader::new(file))
}

/// Hex SHA-256 of the canonical JSON encoding of a config; stored in mask
/// files so a mask can be checked against the model it was built for.
pub fn config_fingerprint(cfg: &ModelConfig) -> String {
    use sha2::{Digest, Sha256};
    let json = serde_json::to_vec(cfg).expect("config serializes");
    let digest = Sha256::digest(&json);
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

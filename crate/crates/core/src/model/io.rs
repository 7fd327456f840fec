//! Versioned model container.
//!
//! Layout: 8-byte magic `CXTMODL1`, little-endian u64 header length, JSON
//! header (architecture, shapes, vocabulary, seed, training config), then
//! raw little-endian f32 parameter blocks in header-declared order. The
//! embedding matrix is stored as the first tensor so a saved model is
//! self-contained for evaluation and explanation.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::num::Real;
use crate::{Error, Result};

use super::{Architecture, Model, TrainConfig};

const MAGIC: &[u8; 8] = b"CXTMODL1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    arch: Architecture,
    embedding_dim: usize,
    max_len: usize,
    seed: u64,
    train_config: Option<TrainConfig>,
    /// Vocabulary tokens for indices 1..=V (0 is PAD, V+1 is UNK).
    vocab: Vec<String>,
    tensors: Vec<TensorMeta>,
}

pub fn save_model<R: Real>(model: &Model<R>, path: &Path) -> Result<()> {
    let mut tensors = vec![TensorMeta {
        name: "embedding".into(),
        rows: model.embedding.rows(),
        cols: model.embedding.cols(),
    }];
    for e in &model.layout.entries {
        tensors.push(TensorMeta {
            name: e.name.clone(),
            rows: e.rows,
            cols: e.cols,
        });
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        arch: model.arch.clone(),
        embedding_dim: model.embedding_dim(),
        max_len: model.max_len,
        seed: model.seed,
        train_config: model.trained_with.clone(),
        vocab: model.vocab.keys().cloned().collect(),
        tensors,
    };
    let header_bytes = serde_json::to_vec(&header)?;

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&header_bytes).map_err(io_err)?;

    let mut write_block = |data: &[R]| -> Result<()> {
        let mut buf = Vec::with_capacity(data.len() * 4);
        for &v in data {
            buf.extend_from_slice(&(v.to_f64_lit() as f32).to_le_bytes());
        }
        w.write_all(&buf).map_err(|e| Error::io(path, e))
    };
    write_block(model.embedding.as_slice())?;
    for e in &model.layout.entries {
        write_block(&model.params[e.offset..e.offset + e.len()])?;
    }
    Ok(())
}

pub fn load_model<R: Real>(path: &Path) -> Result<Model<R>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |msg: &str| Error::ModelFormat {
        path: path.to_owned(),
        msg: msg.to_owned(),
    };

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| bad("file too short for magic"))?;
    if &magic != MAGIC {
        return Err(bad("bad magic; not a model file"));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)
        .map_err(|_| bad("missing header length"))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|_| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&header_bytes)?;
    if header.format_version != FORMAT_VERSION {
        return Err(bad(&format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    header.arch.validate()?;

    let mut read_block = |rows: usize, cols: usize| -> Result<Vec<R>> {
        let mut buf = vec![0u8; rows * cols * 4];
        r.read_exact(&mut buf)
            .map_err(|_| bad("truncated parameter block"))?;
        Ok(buf
            .chunks_exact(4)
            .map(|c| R::from_f64_lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect())
    };

    let layout = header.arch.build_layout(header.embedding_dim);
    let mut embedding = None;
    let mut params = vec![R::zero(); layout.total];
    for meta in &header.tensors {
        let data = read_block(meta.rows, meta.cols)?;
        if meta.name == "embedding" {
            if meta.rows != header.vocab.len() + 2 || meta.cols != header.embedding_dim {
                return Err(bad("embedding tensor shape disagrees with header"));
            }
            embedding = Some(Matrix::from_vec(meta.rows, meta.cols, data));
        } else {
            let e = layout.entry(&meta.name);
            if (e.rows, e.cols) != (meta.rows, meta.cols) {
                return Err(bad(&format!("tensor {} shape mismatch", meta.name)));
            }
            params[e.offset..e.offset + e.len()].copy_from_slice(&data);
        }
    }
    let embedding = embedding.ok_or_else(|| bad("missing embedding tensor"))?;

    let mut vocab = IndexMap::with_capacity(header.vocab.len());
    for (i, token) in header.vocab.into_iter().enumerate() {
        vocab.insert(token, i + 1);
    }

    Ok(Model {
        arch: header.arch,
        embedding,
        vocab,
        max_len: header.max_len,
        seed: header.seed,
        params,
        layout,
        trained_with: header.train_config,
    })
}

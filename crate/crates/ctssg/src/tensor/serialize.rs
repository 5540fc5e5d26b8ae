//! Flat binary parameter storage with a JSON manifest.
//!
//! Values are always written as little-endian f64 regardless of the model
//! element type, so checkpoints are portable between precisions; the
//! manifest records which precision produced them.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    /// Element offset into the flat f64 buffer.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ParamManifest {
    /// Element type the values were produced with ("f32" or "f64").
    pub dtype: String,
    pub total_len: usize,
    pub params: Vec<ParamRecord>,
}

impl ParamManifest {
    pub fn record(&self, name: &str) -> Option<&ParamRecord> {
        self.params.iter().find(|r| r.name == name)
    }
}

/// Writes named tensors to `path` as packed little-endian f64 and returns
/// the manifest describing the layout.
pub fn save_named<F: Scalar>(path: &Path, named: &[(String, &Tensor<F>)]) -> Result<ParamManifest> {
    let mut records = Vec::with_capacity(named.len());
    let mut offset = 0usize;
    let total: usize = named.iter().map(|(_, t)| t.len()).sum();
    let mut bytes = Vec::with_capacity(total * 8);
    for (name, t) in named {
        records.push(ParamRecord {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
            len: t.len(),
        });
        offset += t.len();
        for v in t.data() {
            bytes.extend_from_slice(&v.to_f64().to_le_bytes());
        }
    }
    fs::write(path, &bytes)?;
    Ok(ParamManifest {
        dtype: F::DTYPE.to_string(),
        total_len: total,
        params: records,
    })
}

/// Reads tensors described by `manifest` back from `path`.
/// `trainable` controls the requires-grad flag of the results.
pub fn load_named<F: Scalar>(
    path: &Path,
    manifest: &ParamManifest,
    trainable: bool,
) -> Result<Vec<(String, Tensor<F>)>> {
    let bytes = fs::read(path)?;
    if bytes.len() != manifest.total_len * 8 {
        return Err(Error::load(format!(
            "{} holds {} bytes, manifest expects {}",
            path.display(),
            bytes.len(),
            manifest.total_len * 8
        )));
    }
    let mut values = Vec::with_capacity(manifest.total_len);
    for chunk in bytes.chunks_exact(8) {
        values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    let mut out = Vec::with_capacity(manifest.params.len());
    for rec in &manifest.params {
        let end = rec.offset.checked_add(rec.len).ok_or_else(|| {
            Error::load(format!("record {} has overflowing extent", rec.name))
        })?;
        if end > values.len() {
            return Err(Error::load(format!(
                "record {} spans [{}, {end}) beyond buffer of {}",
                rec.name,
                rec.offset,
                values.len()
            )));
        }
        if rec.shape.iter().product::<usize>() != rec.len {
            return Err(Error::load(format!(
                "record {} shape {:?} does not match length {}",
                rec.name, rec.shape, rec.len
            )));
        }
        let data: Vec<F> = values[rec.offset..end]
            .iter()
            .map(|&v| F::from_f64(v))
            .collect();
        let t = if trainable {
            Tensor::param(rec.shape.clone(), data)?
        } else {
            Tensor::new(rec.shape.clone(), data)?
        };
        out.push((rec.name.clone(), t));
    }
    Ok(out)
}

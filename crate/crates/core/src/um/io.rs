//! Model file: magic `UMNN`, `u32` format version, `u32` metadata length,
//! JSON metadata, then every layer's weights (row-major) and biases as
//! little-endian `f64`.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::mlp::{Layer, Mlp};
use super::MlpModel;
use crate::dataset::EncodingMode;
use crate::error::{Error, Result};
use crate::exact::MarginalVector;
use crate::io_util::write_atomic;

pub const MODEL_MAGIC: &[u8; 4] = b"UMNN";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Metadata {
    layer_sizes: Vec<usize>,
    encoding: EncodingMode,
    dropout_rate: f64,
    priors: MarginalVector,
    dtype: String,
}

pub fn model_to_bytes(model: &MlpModel) -> Result<Vec<u8>> {
    let meta = Metadata {
        layer_sizes: model.layer_sizes(),
        encoding: model.encoding(),
        dropout_rate: model.dropout_rate(),
        priors: model.priors().clone(),
        dtype: "f64".into(),
    };
    let meta = serde_json::to_vec(&meta)?;
    let mut out = Vec::with_capacity(12 + meta.len() + 8 * model.net().param_count());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    for layer in model.net().layers() {
        for v in layer.weights.iter().chain(layer.biases.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::CorruptFile(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::CorruptFile("size overflow".into()))?, what)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<MlpModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MODEL_MAGIC {
        return Err(Error::CorruptFile("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != MODEL_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: MODEL_VERSION });
    }
    let meta_len = r.u32("metadata length")? as usize;
    let meta: Metadata = serde_json::from_slice(r.take(meta_len, "metadata")?)
        .map_err(|e| Error::CorruptFile(format!("metadata: {e}")))?;
    if meta.dtype != "f64" {
        return Err(Error::CorruptFile(format!("unsupported dtype {}", meta.dtype)));
    }
    if meta.layer_sizes.len() < 2 {
        return Err(Error::CorruptFile("fewer than two layer sizes".into()));
    }
    let mut layers = Vec::with_capacity(meta.layer_sizes.len() - 1);
    for (i, w) in meta.layer_sizes.windows(2).enumerate() {
        let weights = r.f64s(w[0] * w[1], &format!("layer {i} weights"))?;
        let biases = r.f64s(w[1], &format!("layer {i} biases"))?;
        layers.push(Layer {
            weights: Array2::from_shape_vec((w[0], w[1]), weights).map_err(|e| Error::CorruptFile(e.to_string()))?,
            biases: Array1::from_vec(biases),
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptFile(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let net = Mlp::from_layers(layers).map_err(|e| Error::CorruptFile(e.to_string()))?;
    MlpModel::from_parts(net, meta.dropout_rate, meta.encoding, meta.priors)
        .map_err(|e| Error::CorruptFile(e.to_string()))
}

pub fn save_model(model: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &model_to_bytes(model)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MlpModel> {
    model_from_bytes(&std::fs::read(path)?)
}

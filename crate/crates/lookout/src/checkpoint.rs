//! Parameter checkpoints.
//!
//! Layout: 8-byte magic, little-endian `u32` format version, little-endian
//! `u32` header length, the JSON header, then every parameter tensor as raw
//! little-endian `f32` values in declaration order. Optimizer moments are not
//! stored; a resumed run restarts them from zero.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{Architecture, ClassificationMode, ExplorerModel, ParamStore, UpperBoundModel};

pub const MAGIC: &[u8; 8] = b"LOOKOUT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Explorer,
    UpperBound,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub kind: ModelKind,
    /// Profile name the run was configured with ("full", "micro" or
    /// "custom").
    pub profile: String,
    pub architecture: Architecture,
    pub classification: ClassificationMode,
    pub classes: usize,
    /// Completed optimizer steps.
    pub iteration: u64,
    /// Completed epochs.
    pub epoch: u64,
    pub tensors: Vec<TensorEntry>,
}

fn tensor_entries(store: &ParamStore) -> Vec<TensorEntry> {
    store
        .params()
        .iter()
        .map(|p| TensorEntry {
            name: p.name.clone(),
            shape: p.var.dims().to_vec(),
        })
        .collect()
}

pub fn encode(header: &CheckpointHeader, store: &ParamStore) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + 4 * store.parameter_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for values in store.flat_values()? {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Splits a checkpoint into its header and per-tensor values.
pub fn decode(bytes: &[u8]) -> Result<(CheckpointHeader, Vec<Vec<f32>>)> {
    let mut r = bytes;
    let mut magic = [0u8; 8];
    let mut word = [0u8; 4];
    let short = |_| Error::Checkpoint("truncated checkpoint".into());
    r.read_exact(&mut magic).map_err(short)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    r.read_exact(&mut word).map_err(short)?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    r.read_exact(&mut word).map_err(short)?;
    let len = u32::from_le_bytes(word) as usize;
    if r.len() < len {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&r[..len]).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    r = &r[len..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        let n: usize = t.shape.iter().product();
        if r.len() < 4 * n {
            return Err(Error::Checkpoint(format!("truncated data for {}", t.name)));
        }
        let values = r[..4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push(values);
        r = &r[4 * n..];
    }
    if !r.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
    }
    Ok((header, tensors))
}

/// Overwrites `store` with checkpoint values after checking names and shapes.
pub fn restore(store: &ParamStore, header: &CheckpointHeader, values: &[Vec<f32>]) -> Result<()> {
    let expected = tensor_entries(store);
    if expected != header.tensors {
        return Err(Error::Checkpoint(
            "checkpoint tensors do not match the model's parameters".into(),
        ));
    }
    for (p, v) in store.params().iter().zip(values) {
        let t = Tensor::from_slice(v, p.var.dims(), store.device())?.to_dtype(store.dtype())?;
        p.var.set(&t)?;
    }
    Ok(())
}

/// Writes via a temporary file and a rename so readers never see a partial
/// checkpoint.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<(CheckpointHeader, Vec<Vec<f32>>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn explorer_header(model: &ExplorerModel, profile: &str, iteration: u64, epoch: u64) -> CheckpointHeader {
    CheckpointHeader {
        kind: ModelKind::Explorer,
        profile: profile.to_string(),
        architecture: model.arch.clone(),
        classification: model.mode,
        classes: model.classes,
        iteration,
        epoch,
        tensors: tensor_entries(&model.store),
    }
}

pub fn upper_bound_header(model: &UpperBoundModel, profile: &str, iteration: u64, epoch: u64) -> CheckpointHeader {
    CheckpointHeader {
        kind: ModelKind::UpperBound,
        profile: profile.to_string(),
        architecture: model.arch.clone(),
        classification: ClassificationMode::UpperBound,
        classes: model.classes,
        iteration,
        epoch,
        tensors: tensor_entries(&model.store),
    }
}

pub fn load_explorer(path: &Path, dtype: DType) -> Result<(ExplorerModel, CheckpointHeader)> {
    match load(path, dtype)? {
        (LoadedModel::Explorer(m), h) => Ok((m, h)),
        _ => Err(Error::Checkpoint(format!(
            "{} holds an upper-bound classifier",
            path.display()
        ))),
    }
}

pub fn load_upper_bound(path: &Path, dtype: DType) -> Result<(UpperBoundModel, CheckpointHeader)> {
    match load(path, dtype)? {
        (LoadedModel::UpperBound(m), h) => Ok((m, h)),
        _ => Err(Error::Checkpoint(format!("{} holds an explorer model", path.display()))),
    }
}

pub enum LoadedModel {
    Explorer(ExplorerModel),
    UpperBound(UpperBoundModel),
}

/// Loads whichever kind of model the checkpoint holds.
pub fn load(path: &Path, dtype: DType) -> Result<(LoadedModel, CheckpointHeader)> {
    let (header, values) = read_file(path)?;
    let model = match header.kind {
        ModelKind::Explorer => {
            let m = ExplorerModel::new(
                header.architecture.clone(),
                header.classification,
                header.classes,
                dtype,
                0,
            )?;
            restore(&m.store, &header, &values)?;
            LoadedModel::Explorer(m)
        }
        ModelKind::UpperBound => {
            let m = UpperBoundModel::new(header.architecture.clone(), header.classes, dtype, 0)?;
            restore(&m.store, &header, &values)?;
            LoadedModel::UpperBound(m)
        }
    };
    Ok((model, header))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_roundtrip() {
        let m = ExplorerModel::new(Architecture::micro(), ClassificationMode::Off, 26, DType::F32, 5).unwrap();
        let header = explorer_header(&m, "micro", 12, 3);
        let bytes = encode(&header, &m.store).unwrap();
        let (h2, values) = decode(&bytes).unwrap();
        assert_eq!(h2, header);
        assert_eq!(values, m.store.flat_values().unwrap());

        let other = ExplorerModel::new(Architecture::micro(), ClassificationMode::Off, 26, DType::F32, 6).unwrap();
        restore(&other.store, &h2, &values).unwrap();
        assert_eq!(other.store.flat_values().unwrap(), values);
    }

    #[test]
    fn rejects_corruption() {
        let m = ExplorerModel::new(Architecture::micro(), ClassificationMode::Off, 26, DType::F32, 5).unwrap();
        let bytes = encode(&explorer_header(&m, "micro", 0, 0), &m.store).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode(&extra).is_err());
    }
}

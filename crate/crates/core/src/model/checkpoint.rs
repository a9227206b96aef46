//! Safetensors checkpoints with a versioned JSON header.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::transreid::TransReid;
use crate::datamodel::normalize::NormStats;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_KEY: &str = "header";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model: ModelConfig,
    pub normalization: NormStats,
    pub inference_shuffle_seed: u64,
    /// Training mode name, e.g. `bl` or `pada`.
    pub train_mode: String,
    /// Instance id of each identity class, by class index.
    pub id_classes: Vec<i64>,
    /// Bike model of each model-classifier output, by index.
    pub model_classes: Vec<String>,
    /// Free-form training settings echoed for provenance.
    pub training: serde_json::Value,
}

impl CheckpointHeader {
    pub fn new(model: ModelConfig, normalization: NormStats, inference_shuffle_seed: u64) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            model,
            normalization,
            inference_shuffle_seed,
            train_mode: String::new(),
            id_classes: Vec::new(),
            model_classes: Vec::new(),
            training: serde_json::Value::Null,
        }
    }
}

/// Serialise a network's parameters and buffers (as f32) plus the header.
pub fn to_bytes(model: &TransReid, header: &CheckpointHeader) -> Result<Vec<u8>> {
    if &header.model != model.config() {
        return Err(Error::Checkpoint("header config does not describe this model".into()));
    }
    let mut buffers: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    for (name, var) in model.store().named_tensors() {
        let values: Vec<f32> = var.as_tensor().to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
        let bytes = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        buffers.push((name.clone(), var.dims().to_vec(), bytes));
    }
    let views = buffers
        .iter()
        .map(|(n, shape, bytes)| {
            TensorView::new(Dtype::F32, shape.clone(), bytes)
                .map(|v| (n.clone(), v))
                .map_err(|e| Error::Checkpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let meta = HashMap::from([(HEADER_KEY.to_string(), serde_json::to_string(header)?)]);
    safetensors::serialize(views, Some(meta)).map_err(|e| Error::Checkpoint(e.to_string()))
}

/// Parse checkpoint bytes into the header and named f32 tensors.
pub fn from_bytes(bytes: &[u8]) -> Result<(CheckpointHeader, BTreeMap<String, Tensor>)> {
    let bad = |m: String| Error::Checkpoint(m);
    let (_, meta) = SafeTensors::read_metadata(bytes).map_err(|e| bad(e.to_string()))?;
    let header_json = meta
        .metadata()
        .as_ref()
        .and_then(|m| m.get(HEADER_KEY))
        .ok_or_else(|| bad("checkpoint has no header".into()))?;
    let header: CheckpointHeader =
        serde_json::from_str(header_json).map_err(|e| bad(format!("malformed header: {e}")))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "checkpoint format {} is not supported (expected {CHECKPOINT_VERSION})",
            header.format_version
        )));
    }
    header.model.validate().map_err(|e| bad(format!("invalid model config: {e}")))?;
    let st = SafeTensors::deserialize(bytes).map_err(|e| bad(e.to_string()))?;
    let mut tensors = BTreeMap::new();
    for (name, view) in st.tensors() {
        if view.dtype() != Dtype::F32 {
            return Err(bad(format!("tensor `{name}` is not f32")));
        }
        let values: Vec<f32> = view
            .data()
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.insert(name, Tensor::from_vec(values, view.shape(), &Device::Cpu)?);
    }
    Ok((header, tensors))
}

pub fn save(path: &Path, model: &TransReid, header: &CheckpointHeader) -> Result<()> {
    let bytes = to_bytes(model, header)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Load a checkpoint into a network of the given dtype.
pub fn load(path: &Path, dtype: DType) -> Result<(CheckpointHeader, TransReid)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let (header, tensors) = from_bytes(&bytes)?;
    let model = TransReid::new(header.model.clone(), dtype, 0)?;
    model.store().load(&tensors)?;
    Ok((header, model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;

    fn small() -> ModelConfig {
        ModelConfig {
            image_size: 16,
            patch_size: 4,
            patch_stride: 4,
            embed_dim: 8,
            depth: 2,
            num_heads: 2,
            num_ids: 3,
            ..ModelConfig::desk(3)
        }
    }

    #[test]
    fn round_trip_is_exact_and_deterministic() {
        let m = TransReid::new(small(), DType::F32, 4).unwrap();
        let h = CheckpointHeader::new(small(), NormStats::identity(), 17);
        let a = to_bytes(&m, &h).unwrap();
        assert_eq!(a, to_bytes(&m, &h).unwrap());
        let (h2, tensors) = from_bytes(&a).unwrap();
        assert_eq!(h2, h);
        let m2 = TransReid::new(small(), DType::F32, 99).unwrap();
        m2.store().load(&tensors).unwrap();
        assert_eq!(a, to_bytes(&m2, &h).unwrap());
    }

    #[test]
    fn mismatches_rejected() {
        let m = TransReid::new(small(), DType::F32, 4).unwrap();
        let mut h = CheckpointHeader::new(small(), NormStats::identity(), 17);
        let bytes = to_bytes(&m, &h).unwrap();
        let (_, tensors) = from_bytes(&bytes).unwrap();
        let bigger = TransReid::new(ModelConfig { embed_dim: 16, ..small() }, DType::F32, 0).unwrap();
        assert!(matches!(bigger.store().load(&tensors), Err(Error::Checkpoint(_))));
        h.format_version = 99;
        h.model = small();
        let text = serde_json::to_string(&h).unwrap();
        let meta = HashMap::from([(HEADER_KEY.to_string(), text)]);
        let empty: Vec<(String, TensorView)> = Vec::new();
        let raw = safetensors::serialize(empty, Some(meta)).unwrap();
        assert!(matches!(from_bytes(&raw), Err(Error::Checkpoint(_))));
        assert!(from_bytes(b"garbage").is_err());
    }
}

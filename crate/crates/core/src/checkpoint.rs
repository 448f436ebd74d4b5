//! Checkpoint container: a safetensors file of f32 parameters plus string metadata
//! (`schema_version`, `module`, `config` as JSON, `step`, `seed`).

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub schema_version: u32,
    pub module: String,
    pub config: serde_json::Value,
    pub step: u64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: HashMap<String, Tensor>,
}

fn corrupt(path: &Path, reason: impl std::fmt::Display) -> Error {
    Error::Checkpoint { path: path.to_path_buf(), reason: reason.to_string() }
}

pub fn save(path: impl AsRef<Path>, store: &ParamStore, meta: &CheckpointMeta) -> Result<()> {
    let path = path.as_ref();
    let mut buffers = Vec::new();
    for (name, t) in store.named_tensors() {
        let values = t.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?;
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        buffers.push((name, t.dims().to_vec(), bytes));
    }
    let views = buffers
        .iter()
        .map(|(name, shape, bytes)| {
            TensorView::new(Dtype::F32, shape.clone(), bytes).map(|v| (name.clone(), v)).map_err(|e| corrupt(path, e))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut info = HashMap::new();
    info.insert("schema_version".to_string(), meta.schema_version.to_string());
    info.insert("module".to_string(), meta.module.clone());
    info.insert("config".to_string(), serde_json::to_string(&meta.config)?);
    info.insert("step".to_string(), meta.step.to_string());
    info.insert("seed".to_string(), meta.seed.to_string());
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let bytes = safetensors::serialize(views, Some(info)).map_err(|e| corrupt(path, e))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| corrupt(path, e))?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| corrupt(path, e))?;
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| corrupt(path, e))?;
    let info = header.metadata().clone().ok_or_else(|| corrupt(path, "missing metadata"))?;
    let field = |k: &str| info.get(k).cloned().ok_or_else(|| corrupt(path, format!("missing metadata key `{k}`")));
    let schema_version: u32 = field("schema_version")?.parse().map_err(|e| corrupt(path, e))?;
    if schema_version != SCHEMA_VERSION {
        return Err(corrupt(path, format!("unsupported schema version {schema_version}")));
    }
    let meta = CheckpointMeta {
        schema_version,
        module: field("module")?,
        config: serde_json::from_str(&field("config")?).map_err(|e| corrupt(path, e))?,
        step: field("step")?.parse().map_err(|e| corrupt(path, e))?,
        seed: field("seed")?.parse().map_err(|e| corrupt(path, e))?,
    };
    let mut tensors = HashMap::new();
    for (name, view) in st.tensors() {
        if view.dtype() != Dtype::F32 {
            return Err(corrupt(path, format!("tensor `{name}` has dtype {:?}", view.dtype())));
        }
        let values: Vec<f32> =
            view.data().chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        tensors.insert(name, Tensor::from_vec(values, view.shape(), &Device::Cpu)?);
    }
    Ok(Checkpoint { meta, tensors })
}

/// Loads `path` and checks that it holds `module`.
pub fn load_module(path: impl AsRef<Path>, module: &str) -> Result<Checkpoint> {
    let path = path.as_ref();
    let ckpt = load(path)?;
    if ckpt.meta.module != module {
        return Err(corrupt(path, format!("holds `{}`, expected `{module}`", ckpt.meta.module)));
    }
    Ok(ckpt)
}

impl Checkpoint {
    pub fn config<T: DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_value(self.meta.config.clone())?)
    }

    /// Copies the stored values into `store`; every parameter must be present.
    pub fn restore(&self, store: &ParamStore) -> Result<()> {
        store.load(&self.tensors)
    }

    /// Copies only the stored tensors whose names start with `prefix`, with the prefix
    /// stripped, into `store`.
    pub fn restore_prefixed(&self, prefix: &str, store: &ParamStore) -> Result<()> {
        let sub: HashMap<String, Tensor> = self
            .tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
            .collect();
        store.load(&sub)
    }
}

/// Loads externally produced encoder weights into `store`, for example a converted
/// pretrained model with matching parameter names and shapes.
pub fn load_pretrained(path: impl AsRef<Path>, store: &ParamStore) -> Result<()> {
    let path = path.as_ref();
    let ckpt = load(path)?;
    ckpt.restore(store).map_err(|e| corrupt(path, e))
}

use std::path::Path;

use candle_core::DType;
use serde::{Deserialize, Serialize};

use super::config::StageKind;
use crate::backbone::{Encoder, EncoderConfig};
use crate::checkpoint::{self, Checkpoint, CheckpointMeta, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::generator::{Adapter, IstftHeadConfig, VocosConfig, Vocoder};
use crate::nn::ParamStore;
use crate::pld::PldConfig;
use crate::postnet::{Postnet, PostnetConfig};

pub const TRAIN_DTYPE: DType = DType::F32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub encoder: EncoderConfig,
    pub pld: PldConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterSpec {
    pub rep_dim: usize,
    pub net: VocosConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocoderSpec {
    pub rep_dim: usize,
    pub net: VocosConfig,
    pub head: IstftHeadConfig,
}

/// A module together with the store that owns its parameters.
pub struct Owned<M> {
    pub store: ParamStore,
    pub module: M,
}

pub fn build_encoder(spec: &BackboneSpec, seed: u64, with_mask_embedding: bool) -> Result<Owned<Encoder>> {
    let store = ParamStore::new(seed, TRAIN_DTYPE);
    let module = Encoder::new(&store.root(), &spec.encoder, with_mask_embedding)?;
    Ok(Owned { store, module })
}

pub fn build_adapter(spec: &AdapterSpec, seed: u64) -> Result<Owned<Adapter>> {
    let store = ParamStore::new(seed, TRAIN_DTYPE);
    let module = Adapter::new(&store.root(), spec.rep_dim, &spec.net)?;
    Ok(Owned { store, module })
}

pub fn build_vocoder(spec: &VocoderSpec, seed: u64) -> Result<Owned<Vocoder>> {
    let store = ParamStore::new(seed, TRAIN_DTYPE);
    let module = Vocoder::new(&store.root(), spec.rep_dim, &spec.net, spec.head)?;
    Ok(Owned { store, module })
}

pub fn build_postnet(cfg: &PostnetConfig, seed: u64) -> Result<Owned<Postnet>> {
    let store = ParamStore::new(seed, TRAIN_DTYPE);
    let module = Postnet::new(&store.root(), cfg)?;
    Ok(Owned { store, module })
}

pub fn save_stage<C: Serialize>(
    dir: &Path,
    kind: StageKind,
    store: &ParamStore,
    spec: &C,
    step: u64,
    seed: u64,
) -> Result<std::path::PathBuf> {
    let path = dir.join(kind.checkpoint_file());
    let meta = CheckpointMeta {
        schema_version: SCHEMA_VERSION,
        module: kind.as_str().to_string(),
        config: serde_json::to_value(spec)?,
        step,
        seed,
    };
    checkpoint::save(&path, store, &meta)?;
    Ok(path)
}

/// Loads the checkpoint of `kind` from `dir`; `needed_by` names the stage asking for it
/// so a missing file reports the dependency.
pub fn open_stage(dir: &Path, kind: StageKind, needed_by: &str) -> Result<Checkpoint> {
    let path = dir.join(kind.checkpoint_file());
    if !path.exists() {
        return Err(Error::MissingUpstream { stage: needed_by.to_string(), requires: kind.as_str().to_string(), path });
    }
    checkpoint::load_module(&path, kind.as_str())
}

fn restored<M>(ckpt: &Checkpoint, owned: Owned<M>, dir: &Path, kind: StageKind) -> Result<Owned<M>> {
    ckpt.restore(&owned.store).map_err(|e| Error::Checkpoint {
        path: dir.join(kind.checkpoint_file()),
        reason: e.to_string(),
    })?;
    Ok(owned)
}

fn spec_of<C: serde::de::DeserializeOwned>(ckpt: &Checkpoint, dir: &Path, kind: StageKind) -> Result<C> {
    ckpt.config().map_err(|e| Error::Checkpoint { path: dir.join(kind.checkpoint_file()), reason: e.to_string() })
}

pub fn load_encoder(dir: &Path, needed_by: &str) -> Result<(BackboneSpec, Owned<Encoder>)> {
    let ckpt = open_stage(dir, StageKind::Backbone, needed_by)?;
    let spec: BackboneSpec = spec_of(&ckpt, dir, StageKind::Backbone)?;
    let owned = restored(&ckpt, build_encoder(&spec, ckpt.meta.seed, true)?, dir, StageKind::Backbone)?;
    Ok((spec, owned))
}

pub fn load_adapter(dir: &Path, needed_by: &str) -> Result<(AdapterSpec, Owned<Adapter>)> {
    let ckpt = open_stage(dir, StageKind::Adapter, needed_by)?;
    let spec: AdapterSpec = spec_of(&ckpt, dir, StageKind::Adapter)?;
    let owned = restored(&ckpt, build_adapter(&spec, ckpt.meta.seed)?, dir, StageKind::Adapter)?;
    Ok((spec, owned))
}

pub fn load_vocoder(dir: &Path, needed_by: &str) -> Result<(VocoderSpec, Owned<Vocoder>)> {
    let ckpt = open_stage(dir, StageKind::Vocoder, needed_by)?;
    let spec: VocoderSpec = spec_of(&ckpt, dir, StageKind::Vocoder)?;
    let owned = restored(&ckpt, build_vocoder(&spec, ckpt.meta.seed)?, dir, StageKind::Vocoder)?;
    Ok((spec, owned))
}

pub fn load_postnet(dir: &Path, needed_by: &str) -> Result<(PostnetConfig, Owned<Postnet>)> {
    let ckpt = open_stage(dir, StageKind::Postnet, needed_by)?;
    let spec: PostnetConfig = spec_of(&ckpt, dir, StageKind::Postnet)?;
    let owned = restored(&ckpt, build_postnet(&spec, ckpt.meta.seed)?, dir, StageKind::Postnet)?;
    Ok((spec, owned))
}

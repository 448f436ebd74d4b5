//! Staged training and the end-to-end enhancer.
//!
//! Stages run in dependency order (backbone, then adapter and vocoder, then postnet);
//! each writes `<stage>.safetensors` and a line-delimited training log into one
//! checkpoint directory, which [`Enhancer::load`] later reads back.

mod config;
mod data;
mod enhance;
mod models;
mod schedule;
mod train;

pub use config::{CorpusConfig, ModelConfig, RunConfig, StageConfig, StageKind};
pub use data::{Corpus, StageData};
pub use enhance::{Cascade, Enhancer, PEAK_LIMIT};
pub use models::{
    build_adapter, build_encoder, build_postnet, build_vocoder, load_adapter, load_encoder, load_postnet, load_vocoder,
    open_stage, save_stage, AdapterSpec, BackboneSpec, Owned, VocoderSpec, TRAIN_DTYPE,
};
pub use schedule::{lr_at, ScheduleConfig};
pub use train::{moving_average, run_all, run_stage, student, teacher, FrozenCheck, LogRecord, StageReport};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::schedule::ScheduleConfig;
use crate::backbone::{EncoderConfig, ENCODER_RATE};
use crate::error::{Error, Result};
use crate::generator::{IstftHeadConfig, VocosConfig};
use crate::objectives::{MsrdConfig, WaveDiscConfig};
use crate::pld::PldConfig;
use crate::postnet::{PostnetConfig, POSTNET_RATE};
use crate::synth::SynthCorpusConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Backbone,
    Adapter,
    Vocoder,
    Postnet,
}

impl StageKind {
    pub const ALL: [StageKind; 4] = [StageKind::Backbone, StageKind::Adapter, StageKind::Vocoder, StageKind::Postnet];

    pub fn as_str(self) -> &'static str {
        match self {
            StageKind::Backbone => "backbone",
            StageKind::Adapter => "adapter",
            StageKind::Vocoder => "vocoder",
            StageKind::Postnet => "postnet",
        }
    }

    pub fn checkpoint_file(self) -> String {
        format!("{}.safetensors", self.as_str())
    }

    /// Stages whose checkpoints must exist before this one can run. All of them stay
    /// frozen while this stage trains.
    pub fn upstream(self) -> &'static [StageKind] {
        match self {
            StageKind::Backbone => &[],
            StageKind::Adapter | StageKind::Vocoder => &[StageKind::Backbone],
            StageKind::Postnet => &[StageKind::Backbone, StageKind::Adapter, StageKind::Vocoder],
        }
    }
}

impl std::str::FromStr for StageKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StageKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

impl std::fmt::Display for StageKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: StageKind,
    pub rate: u32,
    pub segment_s: f64,
    pub batch: usize,
    pub peak_lr: f64,
    pub steps: usize,
    /// Global gradient-norm clip applied to generator and discriminator updates.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    /// Train against discriminators in addition to the reconstruction term.
    #[serde(default = "yes")]
    pub adversarial: bool,
    #[serde(default = "hundred")]
    pub log_every: usize,
}

fn yes() -> bool {
    true
}

fn hundred() -> usize {
    100
}

impl StageConfig {
    pub fn frozen_upstream(&self) -> &'static [StageKind] {
        self.stage.upstream()
    }

    pub fn segment_samples(&self) -> usize {
        (self.segment_s * self.rate as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let want = match self.stage {
            StageKind::Postnet => POSTNET_RATE,
            _ => ENCODER_RATE,
        };
        if self.rate != want {
            return Err(Error::Config(format!("{} stage runs at {want} Hz, config says {}", self.stage, self.rate)));
        }
        if self.batch == 0 || self.steps == 0 || !(self.segment_s > 0.0) || !(self.peak_lr > 0.0) {
            return Err(Error::Config(format!("{} stage needs positive batch, steps, segment and lr", self.stage)));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

/// Where clean speech and interference come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorpusConfig {
    Synthetic(SynthCorpusConfig),
    Manifest { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub adapter: VocosConfig,
    pub vocoder: VocosConfig,
    pub head: IstftHeadConfig,
    pub msrd: MsrdConfig,
    pub wave_disc: WaveDiscConfig,
    pub postnet: PostnetConfig,
    pub pld: PldConfig,
}

impl ModelConfig {
    pub fn desk() -> Self {
        let small = VocosConfig {
            hidden_dim: 32,
            n_resnet_blocks: 1,
            n_convnext_blocks: 2,
            intermediate_dim: 64,
            has_attention: true,
            attention_heads: 2,
        };
        Self {
            encoder: EncoderConfig { cnn_channels: 32, strides: vec![5, 4, 4, 4], n_layers: 2, model_dim: 32, n_heads: 2, ffn_dim: 64 },
            adapter: small.clone(),
            vocoder: small,
            head: IstftHeadConfig::default(),
            msrd: MsrdConfig { hidden_channels: vec![8, 16], layers_per_sub: 2, ..MsrdConfig::default() },
            wave_disc: WaveDiscConfig::default(),
            postnet: PostnetConfig::desk(),
            pld: PldConfig::default(),
        }
    }

    /// Published widths for the generators, discriminators and post-network. The
    /// encoder stays at its desk size because no pretrained large encoder ships here.
    pub fn full() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            adapter: VocosConfig::full(),
            vocoder: VocosConfig::full(),
            head: IstftHeadConfig::default(),
            msrd: MsrdConfig::full(),
            wave_disc: WaveDiscConfig::default(),
            postnet: PostnetConfig::default(),
            pld: PldConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.adapter.validate()?;
        self.vocoder.validate()?;
        self.msrd.validate()?;
        self.postnet.validate()?;
        self.pld.validate()?;
        if self.head.hop != self.encoder.total_stride() || self.head.rate != ENCODER_RATE {
            return Err(Error::Config(format!(
                "vocoder hop {} at {} Hz must equal the encoder frame hop {} at {ENCODER_RATE} Hz",
                self.head.hop,
                self.head.rate,
                self.encoder.total_stride()
            )));
        }
        Ok(())
    }
}

/// Everything a training run needs; serialized as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    pub model: ModelConfig,
    pub corpus: CorpusConfig,
    pub backbone: StageConfig,
    pub adapter: StageConfig,
    pub vocoder: StageConfig,
    pub postnet: StageConfig,
    /// Initial teacher weights; a seeded random teacher is used when absent.
    #[serde(default)]
    pub pretrained_teacher: Option<PathBuf>,
    /// Start the student from the teacher's weights rather than from scratch.
    #[serde(default = "yes")]
    pub student_from_teacher: bool,
}

fn stage(stage: StageKind, rate: u32, segment_s: f64, batch: usize, peak_lr: f64, steps: usize) -> StageConfig {
    let gan = matches!(stage, StageKind::Adapter | StageKind::Vocoder | StageKind::Postnet);
    StageConfig {
        stage,
        rate,
        segment_s,
        batch,
        peak_lr,
        steps,
        grad_clip: gan.then_some(5.0),
        adversarial: gan,
        log_every: 100,
    }
}

impl RunConfig {
    /// Small models on thirty minutes of synthetic audio; every stage runs 500 steps.
    pub fn desk() -> Self {
        Self {
            seed: 0,
            schedule: ScheduleConfig::default(),
            model: ModelConfig::desk(),
            corpus: CorpusConfig::Synthetic(SynthCorpusConfig::desk()),
            backbone: stage(StageKind::Backbone, ENCODER_RATE, 0.5, 4, 1e-3, 500),
            adapter: stage(StageKind::Adapter, ENCODER_RATE, 0.5, 4, 1e-3, 500),
            vocoder: stage(StageKind::Vocoder, ENCODER_RATE, 0.5, 2, 1e-3, 500),
            postnet: stage(StageKind::Postnet, POSTNET_RATE, 0.32, 2, 1e-3, 500),
            pretrained_teacher: None,
            student_from_teacher: true,
        }
    }

    /// Published per-stage rate, segment length, batch, peak learning rate and steps.
    pub fn full() -> Self {
        Self {
            seed: 0,
            schedule: ScheduleConfig::default(),
            model: ModelConfig::full(),
            corpus: CorpusConfig::Synthetic(SynthCorpusConfig::desk()),
            backbone: stage(StageKind::Backbone, ENCODER_RATE, 4.0, 20, 1e-4, 100_000),
            adapter: stage(StageKind::Adapter, ENCODER_RATE, 4.0, 64, 2e-4, 100_000),
            vocoder: stage(StageKind::Vocoder, ENCODER_RATE, 1.0, 40, 2e-4, 200_000),
            postnet: stage(StageKind::Postnet, POSTNET_RATE, 2.0, 3, 2e-4, 100_000),
            pretrained_teacher: None,
            student_from_teacher: true,
        }
    }

    pub fn stage(&self, kind: StageKind) -> &StageConfig {
        match kind {
            StageKind::Backbone => &self.backbone,
            StageKind::Adapter => &self.adapter,
            StageKind::Vocoder => &self.vocoder,
            StageKind::Postnet => &self.postnet,
        }
    }

    pub fn stage_mut(&mut self, kind: StageKind) -> &mut StageConfig {
        match kind {
            StageKind::Backbone => &mut self.backbone,
            StageKind::Adapter => &mut self.adapter,
            StageKind::Vocoder => &mut self.vocoder,
            StageKind::Postnet => &mut self.postnet,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        for kind in StageKind::ALL {
            let s = self.stage(kind);
            if s.stage != kind {
                return Err(Error::Config(format!("[{kind}] table declares stage `{}`", s.stage)));
            }
            s.validate()?;
            self.schedule.validate(s.peak_lr)?;
            if kind != StageKind::Postnet && s.segment_samples() % self.model.encoder.total_stride() != 0 {
                return Err(Error::Config(format!(
                    "{kind} segment of {} samples is not a whole number of {}-sample frames",
                    s.segment_samples(),
                    self.model.encoder.total_stride()
                )));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a TOML run config; a relative manifest path is resolved against the
    /// config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let CorpusConfig::Manifest { path: m } = &mut cfg.corpus {
            if m.is_relative() {
                if let Some(dir) = path.parent() {
                    *m = dir.join(&*m);
                }
            }
        }
        Ok(cfg)
    }
}

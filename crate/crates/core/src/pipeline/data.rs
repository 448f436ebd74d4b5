use rand::Rng as _;
use rayon::prelude::*;

use super::config::CorpusConfig;
use crate::degrade::{degrade, sample_recipe, Banks, CodecBackend, CorpusManifest, DegradedPair, ManifestEntry, Role};
use crate::dsp::wav::read_wav;
use crate::dsp::{resample, Waveform};
use crate::error::{Error, Result};
use crate::rng;
use crate::synth::{self, SynthCorpusConfig};

enum Source {
    Synthetic { cfg: SynthCorpusConfig, seed: u64 },
    Files { manifest: CorpusManifest },
}

pub const SEGMENT_ATTEMPTS: usize = 16;

/// Clean speech plus interference, from either procedural synthesis or a manifest.
pub struct Corpus {
    source: Source,
    codec: CodecBackend,
}

enum Clean {
    Synthetic { cfg: SynthCorpusConfig, seed: u64 },
    Loaded(Vec<Waveform>),
}

/// A corpus resolved at one training rate.
pub struct StageData {
    rate: u32,
    clean: Clean,
    banks: Banks,
}

fn load_at(entry: &ManifestEntry, rate: u32) -> Result<Waveform> {
    let w = read_wav(&entry.path)?;
    if w.rate() == rate {
        Ok(w)
    } else {
        resample(&w, rate)
    }
}

impl Corpus {
    pub fn synthetic(cfg: SynthCorpusConfig, seed: u64) -> Self {
        Self { source: Source::Synthetic { cfg, seed }, codec: CodecBackend::from_env() }
    }

    pub fn from_manifest(manifest: CorpusManifest) -> Self {
        Self { source: Source::Files { manifest }, codec: CodecBackend::from_env() }
    }

    pub fn from_config(cfg: &CorpusConfig, seed: u64) -> Result<Self> {
        Ok(match cfg {
            CorpusConfig::Synthetic(c) => Self::synthetic(c.clone(), rng::derive_seed(seed, "corpus", 0)),
            CorpusConfig::Manifest { path } => Self::from_manifest(CorpusManifest::load(path)?),
        })
    }

    pub fn with_codec(mut self, codec: CodecBackend) -> Self {
        self.codec = codec;
        self
    }

    /// Clean utterances recorded at `rate` or above, resampled to `rate`, together with
    /// interference banks at `rate`.
    pub fn at_rate(&self, rate: u32) -> Result<StageData> {
        let (clean, banks) = match &self.source {
            Source::Synthetic { cfg, seed } => {
                let usable = if cfg.native_rate >= rate { cfg.n_utterances } else { 0 };
                let cfg = SynthCorpusConfig { n_utterances: usable, ..cfg.clone() };
                let banks = synth::banks(&cfg, *seed, rate, self.codec.clone())?;
                (Clean::Synthetic { cfg, seed: *seed }, banks)
            }
            Source::Files { manifest } => {
                let eligible: Vec<&ManifestEntry> = manifest.by_role(Role::Clean).filter(|e| e.rate >= rate).collect();
                let clean = eligible.par_iter().map(|e| load_at(e, rate)).collect::<Result<Vec<_>>>()?;
                let load = |role| manifest.by_role(role).map(|e| load_at(e, rate)).collect::<Result<Vec<_>>>();
                let banks =
                    Banks { noise: load(Role::Noise)?, wind: load(Role::Wind)?, rir: load(Role::Rir)?, codec: self.codec.clone() };
                (Clean::Loaded(clean), banks)
            }
        };
        let data = StageData { rate, clean, banks };
        if data.len() == 0 {
            return Err(Error::Config(format!("corpus has no clean utterances recorded at {rate} Hz or above")));
        }
        Ok(data)
    }
}

impl StageData {
    pub fn rate(&self) -> u32 {
        self.rate
    }

    pub fn len(&self) -> usize {
        match &self.clean {
            Clean::Synthetic { cfg, .. } => cfg.n_utterances,
            Clean::Loaded(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn banks(&self) -> &Banks {
        &self.banks
    }

    pub fn utterance(&self, index: usize) -> Result<Waveform> {
        match &self.clean {
            Clean::Synthetic { cfg, seed } => synth::speech(*seed, index as u64, cfg.utterance_s, self.rate),
            Clean::Loaded(v) => v.get(index).cloned().ok_or(Error::UnresolvedBank { role: "clean", index, len: v.len() }),
        }
    }

    /// A random utterance cropped to `len` samples at a random offset, or zero-padded
    /// at the tail when it is shorter. Crops that land entirely in silence are redrawn
    /// up to [`SEGMENT_ATTEMPTS`] times.
    pub fn segment(&self, r: &mut rng::Rng, len: usize) -> Result<Waveform> {
        let mut seg = None;
        for _ in 0..SEGMENT_ATTEMPTS {
            let utt = self.utterance(r.gen_range(0..self.len()))?;
            let start = if utt.len() > len { r.gen_range(0..=utt.len() - len) } else { 0 };
            let s = utt.slice(start, len).fit_to(len);
            if s.samples().iter().any(|&v| v != 0.0) {
                return Ok(s);
            }
            seg = Some(s);
        }
        Ok(seg.expect("at least one attempt"))
    }

    /// Clean segments for training step `step`; each item has its own random stream.
    pub fn clean_batch(&self, seed: u64, step: usize, batch: usize, len: usize) -> Result<Vec<Waveform>> {
        (0..batch)
            .into_par_iter()
            .map(|i| self.segment(&mut rng::indexed(seed, "batch.clean", (step * batch + i) as u64), len))
            .collect()
    }

    /// Degraded/clean pairs for training step `step`.
    pub fn degraded_batch(&self, seed: u64, step: usize, batch: usize, len: usize) -> Result<Vec<DegradedPair>> {
        (0..batch)
            .into_par_iter()
            .map(|i| {
                let mut r = rng::indexed(seed, "batch.degraded", (step * batch + i) as u64);
                let clean = self.segment(&mut r, len)?;
                let recipe = sample_recipe(&mut r, self.banks.sizes());
                degrade(&clean, &self.banks, &recipe)
            })
            .collect()
    }
}

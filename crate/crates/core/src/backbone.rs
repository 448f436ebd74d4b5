//! Strided patch encoder + Transformer stack producing two representation streams:
//! the first layer's output (acoustic) and the last layer's output (phonetic).
//!
//! Frames flagged by packet-loss detection have their patch features replaced by a
//! single learned mask embedding before the Transformer sees them.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::nn::{gelu, sinusoidal_positions, Init, LayerNorm, Linear, Scope, TransformerLayer};
use crate::objectives::mse;
use crate::pld::PacketLossMask;

pub const ENCODER_RATE: u32 = 16000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub cnn_channels: usize,
    /// Per-level downsampling factors; their product is the frame hop in samples.
    pub strides: Vec<usize>,
    pub n_layers: usize,
    pub model_dim: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { cnn_channels: 64, strides: vec![5, 4, 4, 4], n_layers: 4, model_dim: 64, n_heads: 4, ffn_dim: 128 }
    }
}

impl EncoderConfig {
    pub fn total_stride(&self) -> usize {
        self.strides.iter().product()
    }

    pub fn frame_rate(&self) -> f64 {
        ENCODER_RATE as f64 / self.total_stride() as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers < 2 {
            return Err(Error::Config(format!("encoder needs at least 2 layers, got {}", self.n_layers)));
        }
        if self.strides.is_empty() || self.strides.contains(&0) {
            return Err(Error::Config("encoder strides must be positive".into()));
        }
        if ENCODER_RATE as usize % self.total_stride() != 0 {
            return Err(Error::Config(format!(
                "total stride {} does not divide {ENCODER_RATE} Hz",
                self.total_stride()
            )));
        }
        if self.n_heads == 0 || self.model_dim % self.n_heads != 0 {
            return Err(Error::Config(format!("model_dim {} not divisible by {} heads", self.model_dim, self.n_heads)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Phonetic,
    Acoustic,
}

/// A (frames, dim) feature matrix tagged with its stream.
#[derive(Debug, Clone)]
pub struct Representation {
    pub values: Tensor,
    pub stream: Stream,
    pub frame_rate: f64,
}

impl Representation {
    pub fn frames(&self) -> usize {
        self.values.dims()[0]
    }

    pub fn dim(&self) -> usize {
        self.values.dims()[1]
    }

    pub fn to_vec2(&self) -> Result<Vec<Vec<f64>>> {
        Ok(self.values.to_dtype(DType::F64)?.to_vec2::<f64>()?)
    }
}

/// Intermediate and final activations of one forward pass, all batch-first.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// Patch features after mask substitution, (batch, frames, channels).
    pub cnn_features: Tensor,
    /// First Transformer layer output, (batch, frames, dim).
    pub acoustic: Tensor,
    /// Last Transformer layer output, (batch, frames, dim).
    pub phonetic: Tensor,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    cfg: EncoderConfig,
    patches: Vec<Linear>,
    mask_embedding: Option<Tensor>,
    feature_norm: LayerNorm,
    proj: Linear,
    layers: Vec<TransformerLayer>,
}

impl Encoder {
    /// `with_mask_embedding` is true for the student and false for the frozen teacher.
    pub fn new(s: &Scope, cfg: &EncoderConfig, with_mask_embedding: bool) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.cnn_channels;
        let mut patches = Vec::new();
        let mut input = 1;
        for (i, &stride) in cfg.strides.iter().enumerate() {
            patches.push(Linear::new(&s.pp(format!("cnn.{i}")), input * stride, c, true)?);
            input = c;
        }
        let mask_embedding =
            if with_mask_embedding { Some(s.param("mask_embedding", &[c], Init::Uniform(1.0))?) } else { None };
        let layers = (0..cfg.n_layers)
            .map(|i| TransformerLayer::new(&s.pp(format!("layers.{i}")), cfg.model_dim, cfg.n_heads, cfg.ffn_dim))
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            patches,
            mask_embedding,
            feature_norm: LayerNorm::new(&s.pp("feature_norm"), c)?,
            proj: Linear::new(&s.pp("proj"), c, cfg.model_dim, true)?,
            layers,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn n_frames(&self, samples: usize) -> usize {
        samples / self.cfg.total_stride()
    }

    /// Patch features before substitution, (batch, frames, channels).
    pub fn patch_features(&self, wave: &Tensor) -> Result<Tensor> {
        let (b, len) = wave.dims2()?;
        let frames = self.n_frames(len);
        if frames == 0 {
            return Err(Error::SignalTooShort { len, needed: self.cfg.total_stride() });
        }
        let mut x = wave.narrow(1, 0, frames * self.cfg.total_stride())?.reshape((b, (), 1))?;
        for (lin, &stride) in self.patches.iter().zip(&self.cfg.strides) {
            let (_, t, c) = x.dims3()?;
            x = gelu(&lin.forward(&x.reshape((b, t / stride, stride * c))?)?)?;
        }
        Ok(x)
    }

    /// `wave` is (batch, samples) at 16 kHz; `mask` is (batch, frames) with 1 at lost frames.
    pub fn forward(&self, wave: &Tensor, mask: Option<&Tensor>) -> Result<EncoderOutput> {
        let mut feats = self.patch_features(wave)?;
        let (b, t, c) = feats.dims3()?;
        if let Some(m) = mask {
            let emb = self
                .mask_embedding
                .as_ref()
                .ok_or_else(|| Error::Config("this encoder has no mask embedding".into()))?;
            let (mb, mt) = m.dims2()?;
            if mb != b || mt != t {
                return Err(Error::MaskMismatch { mask: mt, frames: t });
            }
            let m = m.to_dtype(feats.dtype())?.reshape((b, t, 1))?;
            let keep = (1.0 - &m)?;
            let emb = emb.reshape((1, 1, c))?;
            feats = (feats.broadcast_mul(&keep)? + m.broadcast_mul(&emb)?)?;
        }
        let pos = sinusoidal_positions(t, self.cfg.model_dim, feats.dtype(), feats.device())?;
        let mut x = self.proj.forward(&self.feature_norm.forward(&feats)?)?.broadcast_add(&pos)?;
        let mut acoustic = None;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(&x)?;
            if i == 0 {
                acoustic = Some(x.clone());
            }
        }
        Ok(EncoderOutput { cnn_features: feats, acoustic: acoustic.expect("at least two layers"), phonetic: x })
    }

    /// Single-utterance convenience wrapper returning (acoustic, phonetic).
    pub fn encode(&self, wave: &Waveform, mask: Option<&PacketLossMask>) -> Result<(Representation, Representation)> {
        if wave.rate() != ENCODER_RATE {
            return Err(Error::RateMismatch { left: wave.rate(), right: ENCODER_RATE });
        }
        let dtype = self.patches[0].dtype();
        let device = candle_core::Device::Cpu;
        let x = Tensor::from_vec(wave.samples().to_vec(), (1, wave.len()), &device)?.to_dtype(dtype)?;
        let frames = self.n_frames(wave.len());
        let m = match mask {
            Some(mask) => {
                if mask.len() != frames {
                    return Err(Error::MaskMismatch { mask: mask.len(), frames });
                }
                Some(Tensor::from_vec(mask.as_f32(), (1, frames), &device)?.to_dtype(dtype)?)
            }
            None => None,
        };
        let out = self.forward(&x, m.as_ref())?;
        let fr = self.cfg.frame_rate();
        Ok((
            Representation { values: out.acoustic.squeeze(0)?, stream: Stream::Acoustic, frame_rate: fr },
            Representation { values: out.phonetic.squeeze(0)?, stream: Stream::Phonetic, frame_rate: fr },
        ))
    }
}

/// Mean squared error between student and teacher phonetic streams over all frames.
pub fn distill_loss(student: &Tensor, teacher: &Tensor) -> Result<Tensor> {
    mse(student, teacher)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_difference_check, ParamStore};
    use candle_core::Device;

    fn tiny() -> EncoderConfig {
        EncoderConfig { cnn_channels: 8, strides: vec![10, 32], n_layers: 2, model_dim: 8, n_heads: 2, ffn_dim: 16 }
    }

    fn wave(len: usize, seed: u64) -> Vec<f64> {
        (0..len).map(|i| (0.01 * i as f64 * (1.0 + seed as f64)).sin() * 0.3).collect()
    }

    #[test]
    fn shapes_follow_floor_framing() {
        let store = ParamStore::new(1, DType::F32);
        let enc = Encoder::new(&store.root(), &EncoderConfig::default(), true).unwrap();
        let w = Waveform::new(wave(16000 + 100, 1), 16000).unwrap();
        let (ra, rp) = enc.encode(&w, None).unwrap();
        assert_eq!(ra.values.dims(), &[50, 64]);
        assert_eq!(rp.values.dims(), &[50, 64]);
        let (ra2, _) = enc.encode(&w, None).unwrap();
        assert_eq!(ra.to_vec2().unwrap(), ra2.to_vec2().unwrap());
    }

    #[test]
    fn full_mask_feeds_only_the_embedding() {
        let store = ParamStore::new(2, DType::F64);
        let enc = Encoder::new(&store.root(), &tiny(), true).unwrap();
        let x = Tensor::from_vec(wave(3200, 2), (1, 3200), &Device::Cpu).unwrap();
        let m = Tensor::ones((1, 10), DType::F64, &Device::Cpu).unwrap();
        let out = enc.forward(&x, Some(&m)).unwrap();
        let emb = store.named_tensors()["mask_embedding"].to_vec1::<f64>().unwrap();
        for row in out.cnn_features.squeeze(0).unwrap().to_vec2::<f64>().unwrap() {
            assert_eq!(row, emb);
        }
    }

    #[test]
    fn unmasked_frames_keep_their_features() {
        let store = ParamStore::new(3, DType::F64);
        let enc = Encoder::new(&store.root(), &tiny(), true).unwrap();
        let x = Tensor::from_vec(wave(3200, 3), (1, 3200), &Device::Cpu).unwrap();
        let flags = [0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let m = Tensor::new(&flags, &Device::Cpu).unwrap().reshape((1, 10)).unwrap();
        let plain = enc.forward(&x, None).unwrap().cnn_features.squeeze(0).unwrap().to_vec2::<f64>().unwrap();
        let masked = enc.forward(&x, Some(&m)).unwrap().cnn_features.squeeze(0).unwrap().to_vec2::<f64>().unwrap();
        for (t, f) in flags.iter().enumerate() {
            if *f == 0.0 {
                assert_eq!(plain[t], masked[t]);
            }
        }
    }

    #[test]
    fn mask_length_mismatch_errors() {
        let store = ParamStore::new(4, DType::F32);
        let enc = Encoder::new(&store.root(), &EncoderConfig::default(), true).unwrap();
        let w = Waveform::new(wave(3200, 1), 16000).unwrap();
        let mask = PacketLossMask { flags: vec![false; 9], packet_samples: 320 };
        assert!(matches!(enc.encode(&w, Some(&mask)), Err(Error::MaskMismatch { mask: 9, frames: 10 })));
    }

    #[test]
    fn distill_loss_closed_forms() {
        let a = Tensor::new(&[[0.5f64, -1.0], [2.0, 0.0]], &Device::Cpu).unwrap();
        assert_eq!(distill_loss(&a, &a).unwrap().to_scalar::<f64>().unwrap(), 0.0);
        let b = (&a + 0.3).unwrap();
        assert!((distill_loss(&a, &b).unwrap().to_scalar::<f64>().unwrap() - 0.09).abs() < 1e-12);
    }

    #[test]
    fn distillation_gradient_matches_finite_differences() {
        let teacher_store = ParamStore::new(5, DType::F64);
        let teacher = Encoder::new(&teacher_store.root(), &tiny(), false).unwrap();
        let student_store = ParamStore::new(6, DType::F64);
        let student = Encoder::new(&student_store.root(), &tiny(), true).unwrap();
        let clean = Tensor::from_vec(wave(1280, 4), (1, 1280), &Device::Cpu).unwrap();
        let noisy = (&clean + Tensor::from_vec(wave(1280, 9), (1, 1280), &Device::Cpu).unwrap() * 0.2).unwrap();
        let m = Tensor::new(&[[0.0f64, 1.0, 0.0, 0.0]], &Device::Cpu).unwrap();
        let target = teacher.forward(&clean, None).unwrap().phonetic.detach();
        let report = finite_difference_check(
            &student_store,
            || distill_loss(&student.forward(&noisy, Some(&m))?.phonetic, &target),
            3,
            1e-5,
            1e-7,
            1,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }
}

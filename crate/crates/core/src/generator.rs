//! ConvNeXt-style generator backbone with a ResNet stem and one attention block,
//! used twice: as the representation Adapter and as the iSTFT Vocoder.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::backbone::{Representation, ENCODER_RATE};
use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::nn::spectral::{TensorStft, Trim};
use crate::nn::{gelu, Conv1d, DepthwiseConv1d, GroupNorm, Init, LayerNorm, Linear, MultiHeadAttention, Scope};

/// Upper bound applied to predicted spectral magnitudes.
pub const MAX_MAGNITUDE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocosConfig {
    pub hidden_dim: usize,
    pub n_resnet_blocks: usize,
    pub n_convnext_blocks: usize,
    pub intermediate_dim: usize,
    pub has_attention: bool,
    pub attention_heads: usize,
}

impl Default for VocosConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 128,
            n_resnet_blocks: 2,
            n_convnext_blocks: 4,
            intermediate_dim: 384,
            has_attention: true,
            attention_heads: 4,
        }
    }
}

impl VocosConfig {
    pub fn full() -> Self {
        Self {
            hidden_dim: 1024,
            n_resnet_blocks: 4,
            n_convnext_blocks: 12,
            intermediate_dim: 3072,
            has_attention: true,
            attention_heads: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.n_resnet_blocks == 0 || self.n_convnext_blocks == 0 || self.intermediate_dim == 0 {
            return Err(Error::Config(format!("generator counts must be at least 1: {self:?}")));
        }
        if self.has_attention && (self.attention_heads == 0 || self.hidden_dim % self.attention_heads != 0) {
            return Err(Error::Config(format!(
                "hidden_dim {} not divisible by {} heads",
                self.hidden_dim, self.attention_heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IstftHeadConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub rate: u32,
}

impl Default for IstftHeadConfig {
    fn default() -> Self {
        Self { fft_size: 1280, hop: 320, rate: ENCODER_RATE }
    }
}

fn norm_groups(channels: usize) -> usize {
    [32, 16, 8, 4, 2, 1].into_iter().find(|g| channels % g == 0).unwrap_or(1)
}

#[derive(Debug, Clone)]
struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv1d,
    norm2: GroupNorm,
    conv2: Conv1d,
}

impl ResBlock {
    fn new(s: &Scope, dim: usize) -> Result<Self> {
        let g = norm_groups(dim);
        Ok(Self {
            norm1: GroupNorm::new(&s.pp("norm1"), g, dim)?,
            conv1: Conv1d::same(&s.pp("conv1"), dim, dim, 3)?,
            norm2: GroupNorm::new(&s.pp("norm2"), g, dim)?,
            conv2: Conv1d::same(&s.pp("conv2"), dim, dim, 3)?,
        })
    }

    /// (batch, channels, time)
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(&self.norm1.forward(x)?.silu()?)?;
        let h = self.conv2.forward(&self.norm2.forward(&h)?.silu()?)?;
        Ok((x + h)?)
    }
}

#[derive(Debug, Clone)]
struct ConvNeXtBlock {
    dwconv: DepthwiseConv1d,
    norm: LayerNorm,
    up: Linear,
    down: Linear,
    scale: Tensor,
}

impl ConvNeXtBlock {
    fn new(s: &Scope, dim: usize, intermediate: usize, layer_scale: f64) -> Result<Self> {
        Ok(Self {
            dwconv: DepthwiseConv1d::new(&s.pp("dwconv"), dim, 7)?,
            norm: LayerNorm::new(&s.pp("norm"), dim)?,
            up: Linear::new(&s.pp("up"), dim, intermediate, true)?,
            down: Linear::new(&s.pp("down"), intermediate, dim, true)?,
            scale: s.param("scale", &[dim], Init::Const(layer_scale))?,
        })
    }

    /// (batch, channels, time)
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.dwconv.forward(x)?.transpose(1, 2)?;
        let h = self.down.forward(&gelu(&self.up.forward(&self.norm.forward(&h)?)?)?)?;
        let h = h.broadcast_mul(&self.scale)?.transpose(1, 2)?;
        Ok((x + h)?)
    }
}

/// Shared backbone mapping (batch, frames, input_dim) to (batch, frames, hidden_dim).
#[derive(Debug, Clone)]
pub struct VocosBackbone {
    embed: Conv1d,
    resnets: Vec<ResBlock>,
    attn: Option<(LayerNorm, MultiHeadAttention)>,
    convnexts: Vec<ConvNeXtBlock>,
    final_norm: LayerNorm,
}

impl VocosBackbone {
    pub fn new(s: &Scope, input_dim: usize, cfg: &VocosConfig) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden_dim;
        let attn = if cfg.has_attention {
            Some((LayerNorm::new(&s.pp("attn_norm"), h)?, MultiHeadAttention::new(&s.pp("attn"), h, cfg.attention_heads)?))
        } else {
            None
        };
        Ok(Self {
            embed: Conv1d::same(&s.pp("embed"), input_dim, h, 7)?,
            resnets: (0..cfg.n_resnet_blocks).map(|i| ResBlock::new(&s.pp(format!("resnet.{i}")), h)).collect::<Result<_>>()?,
            attn,
            convnexts: (0..cfg.n_convnext_blocks)
                .map(|i| {
                    ConvNeXtBlock::new(
                        &s.pp(format!("convnext.{i}")),
                        h,
                        cfg.intermediate_dim,
                        1.0 / cfg.n_convnext_blocks as f64,
                    )
                })
                .collect::<Result<_>>()?,
            final_norm: LayerNorm::new(&s.pp("final_norm"), h)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.embed.forward(&x.transpose(1, 2)?.contiguous()?)?;
        for r in &self.resnets {
            h = r.forward(&h)?;
        }
        if let Some((norm, attn)) = &self.attn {
            let t = h.transpose(1, 2)?.contiguous()?;
            h = (&t + attn.forward(&norm.forward(&t)?)?)?.transpose(1, 2)?.contiguous()?;
        }
        for c in &self.convnexts {
            h = c.forward(&h)?;
        }
        self.final_norm.forward(&h.transpose(1, 2)?.contiguous()?)
    }
}

fn check_same(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("adapter inputs differ: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Maps degraded acoustic features, conditioned on enhanced phonetic features, to
/// enhanced acoustic features. The two inputs are summed before the backbone.
#[derive(Debug, Clone)]
pub struct Adapter {
    backbone: VocosBackbone,
    head: Linear,
}

impl Adapter {
    pub fn new(s: &Scope, rep_dim: usize, cfg: &VocosConfig) -> Result<Self> {
        Ok(Self {
            backbone: VocosBackbone::new(&s.pp("backbone"), rep_dim, cfg)?,
            head: Linear::new(&s.pp("head"), cfg.hidden_dim, rep_dim, true)?,
        })
    }

    /// The summed backbone input.
    pub fn condition(&self, degraded_ra: &Tensor, enhanced_rp: &Tensor) -> Result<Tensor> {
        check_same(degraded_ra, enhanced_rp)?;
        Ok((degraded_ra + enhanced_rp)?)
    }

    /// Both inputs (batch, frames, dim).
    pub fn forward(&self, degraded_ra: &Tensor, enhanced_rp: &Tensor) -> Result<Tensor> {
        let x = self.condition(degraded_ra, enhanced_rp)?;
        self.head.forward(&self.backbone.forward(&x)?)
    }

    pub fn forward_rep(&self, degraded_ra: &Representation, enhanced_rp: &Representation) -> Result<Representation> {
        let y = self.forward(&degraded_ra.values.unsqueeze(0)?, &enhanced_rp.values.unsqueeze(0)?)?;
        Ok(Representation { values: y.squeeze(0)?, stream: degraded_ra.stream, frame_rate: degraded_ra.frame_rate })
    }
}

/// Representation-to-waveform generator with a magnitude/phase iSTFT head.
#[derive(Debug, Clone)]
pub struct Vocoder {
    backbone: VocosBackbone,
    head: Linear,
    stft: TensorStft,
    head_cfg: IstftHeadConfig,
}

impl Vocoder {
    pub fn new(s: &Scope, rep_dim: usize, cfg: &VocosConfig, head_cfg: IstftHeadConfig) -> Result<Self> {
        let n_freq = head_cfg.fft_size / 2 + 1;
        Ok(Self {
            backbone: VocosBackbone::new(&s.pp("backbone"), rep_dim, cfg)?,
            head: Linear::new(&s.pp("head"), cfg.hidden_dim, 2 * n_freq, true)?,
            stft: TensorStft::new(head_cfg.fft_size, head_cfg.hop, s.dtype(), s.device())?,
            head_cfg,
        })
    }

    pub fn head_config(&self) -> IstftHeadConfig {
        self.head_cfg
    }

    /// (batch, frames, dim) to (batch, frames * hop) samples.
    pub fn forward(&self, rep: &Tensor) -> Result<Tensor> {
        let (_, frames, _) = rep.dims3()?;
        let h = self.head.forward(&self.backbone.forward(rep)?)?;
        let n_freq = self.stft.n_freq();
        let log_mag = h.narrow(2, 0, n_freq)?;
        let phase = h.narrow(2, n_freq, n_freq)?;
        let mag = log_mag.minimum(MAX_MAGNITUDE.ln())?.exp()?;
        let re = (&mag * phase.cos()?)?;
        let im = (&mag * phase.sin()?)?;
        self.stft.inverse(&re, &im, Trim::Same, frames * self.head_cfg.hop)
    }

    /// Largest absolute sample the head can emit for `frames` frames.
    pub fn amplitude_bound(&self, frames: usize) -> f64 {
        self.stft.amplitude_bound(MAX_MAGNITUDE, Trim::Same, frames)
    }

    pub fn synthesize(&self, ra: &Representation) -> Result<Waveform> {
        let y = self.forward(&ra.values.unsqueeze(0)?)?;
        let samples = y.squeeze(0)?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        Waveform::new(samples, self.head_cfg.rate)
    }
}

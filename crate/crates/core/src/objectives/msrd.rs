use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::DiscOutput;
use crate::error::{Error, Result};
use crate::nn::{leaky_relu, Conv1d, Scope};

/// Multi-scale representation discriminator: one 1-D conv stack per hidden width,
/// reading a (batch, frames, dim) representation as `dim` channels over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsrdConfig {
    /// One sub-discriminator per entry; strictly increasing.
    pub hidden_channels: Vec<usize>,
    pub layers_per_sub: usize,
    pub kernel: usize,
    /// Stride of each conv layer; cycled if shorter than `layers_per_sub`.
    pub strides: Vec<usize>,
    pub slope: f64,
}

impl MsrdConfig {
    pub fn full() -> Self {
        Self { hidden_channels: vec![32, 64, 128, 256, 512, 1024], ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_channels.is_empty() || self.hidden_channels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("hidden channels must increase strictly: {:?}", self.hidden_channels)));
        }
        if self.layers_per_sub == 0 || self.kernel % 2 == 0 || self.strides.is_empty() || self.strides.contains(&0) {
            return Err(Error::Config("invalid discriminator layer schedule".into()));
        }
        Ok(())
    }
}

impl Default for MsrdConfig {
    fn default() -> Self {
        Self { hidden_channels: vec![8, 16, 32, 64, 128, 256], layers_per_sub: 4, kernel: 5, strides: vec![1, 2, 2, 1], slope: 0.1 }
    }
}

#[derive(Debug, Clone)]
struct SubDisc {
    convs: Vec<Conv1d>,
    score: Conv1d,
}

#[derive(Debug, Clone)]
pub struct Msrd {
    subs: Vec<SubDisc>,
    slope: f64,
}

impl Msrd {
    pub fn new(s: &Scope, input_dim: usize, cfg: &MsrdConfig) -> Result<Self> {
        cfg.validate()?;
        let subs = cfg
            .hidden_channels
            .iter()
            .enumerate()
            .map(|(k, &width)| {
                let sk = s.pp(format!("sub.{k}"));
                let convs = (0..cfg.layers_per_sub)
                    .map(|l| {
                        let input = if l == 0 { input_dim } else { width };
                        let stride = cfg.strides[l % cfg.strides.len()];
                        Conv1d::new(&sk.pp(format!("conv.{l}")), input, width, cfg.kernel, stride, cfg.kernel / 2, 1)
                    })
                    .collect::<Result<_>>()?;
                Ok(SubDisc { convs, score: Conv1d::new(&sk.pp("score"), width, 1, 3, 1, 1, 1)? })
            })
            .collect::<Result<_>>()?;
        Ok(Self { subs, slope: cfg.slope })
    }

    pub fn n_subs(&self) -> usize {
        self.subs.len()
    }

    /// `rep` is (batch, frames, dim).
    pub fn forward(&self, rep: &Tensor) -> Result<DiscOutput> {
        let x = rep.transpose(1, 2)?.contiguous()?;
        let mut scores = Vec::with_capacity(self.subs.len());
        let mut features = Vec::with_capacity(self.subs.len());
        for sub in &self.subs {
            let mut h = x.clone();
            let mut maps = Vec::with_capacity(sub.convs.len());
            for conv in &sub.convs {
                h = leaky_relu(&conv.forward(&h)?, self.slope)?;
                maps.push(h.clone());
            }
            scores.push(sub.score.forward(&h)?);
            features.push(maps);
        }
        Ok(DiscOutput { scores, features })
    }
}

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::DiscOutput;
use crate::error::Result;
use crate::nn::spectral::TensorStft;
use crate::nn::{leaky_relu, Conv1d, Scope};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveDiscConfig {
    pub periods: Vec<usize>,
    pub period_channels: Vec<usize>,
    /// (fft_size, hop) per spectral sub-discriminator.
    pub resolutions: Vec<(usize, usize)>,
    pub spectral_channels: Vec<usize>,
    pub slope: f64,
}

impl Default for WaveDiscConfig {
    fn default() -> Self {
        Self {
            periods: vec![2, 3, 5, 7, 11],
            period_channels: vec![8, 16, 32],
            resolutions: vec![(512, 128), (1024, 256), (256, 64)],
            spectral_channels: vec![16, 16, 16],
            slope: 0.1,
        }
    }
}

fn run_stack(convs: &[Conv1d], score: &Conv1d, x: &Tensor, slope: f64) -> Result<(Tensor, Vec<Tensor>)> {
    let mut h = x.clone();
    let mut maps = Vec::with_capacity(convs.len());
    for c in convs {
        h = leaky_relu(&c.forward(&h)?, slope)?;
        maps.push(h.clone());
    }
    Ok((score.forward(&h)?, maps))
}

/// Period discriminators: the waveform is folded by its period and each phase is
/// scored as an independent sequence.
#[derive(Debug, Clone)]
pub struct MultiPeriodDisc {
    periods: Vec<usize>,
    subs: Vec<(Vec<Conv1d>, Conv1d)>,
    slope: f64,
}

impl MultiPeriodDisc {
    pub fn new(s: &Scope, cfg: &WaveDiscConfig) -> Result<Self> {
        let subs = cfg
            .periods
            .iter()
            .map(|p| {
                let sp = s.pp(format!("period.{p}"));
                let mut input = 1;
                let mut convs = Vec::new();
                for (l, &c) in cfg.period_channels.iter().enumerate() {
                    convs.push(Conv1d::new(&sp.pp(format!("conv.{l}")), input, c, 5, 3, 2, 1)?);
                    input = c;
                }
                Ok((convs, Conv1d::new(&sp.pp("score"), input, 1, 3, 1, 1, 1)?))
            })
            .collect::<Result<_>>()?;
        Ok(Self { periods: cfg.periods.clone(), subs, slope: cfg.slope })
    }

    pub fn forward(&self, x: &Tensor) -> Result<DiscOutput> {
        let (b, len) = x.dims2()?;
        let mut out = DiscOutput { scores: Vec::new(), features: Vec::new() };
        for (&p, (convs, score)) in self.periods.iter().zip(&self.subs) {
            let rows = len.div_ceil(p);
            let folded = x
                .pad_with_zeros(1, 0, rows * p - len)?
                .reshape((b, rows, p))?
                .transpose(1, 2)?
                .contiguous()?
                .reshape((b * p, 1, rows))?;
            let (s, maps) = run_stack(convs, score, &folded, self.slope)?;
            out.scores.push(s);
            out.features.push(maps);
        }
        Ok(out)
    }
}

/// Spectral discriminators over log-magnitude STFTs, frequency bins as channels.
#[derive(Debug, Clone)]
pub struct MultiResolutionStftDisc {
    stfts: Vec<TensorStft>,
    subs: Vec<(Vec<Conv1d>, Conv1d)>,
    slope: f64,
}

impl MultiResolutionStftDisc {
    pub fn new(s: &Scope, cfg: &WaveDiscConfig) -> Result<Self> {
        let mut stfts = Vec::new();
        let mut subs = Vec::new();
        for (i, &(fft, hop)) in cfg.resolutions.iter().enumerate() {
            let sr = s.pp(format!("stft.{i}"));
            let stft = TensorStft::new(fft, hop, s.dtype(), s.device())?;
            let mut input = stft.n_freq();
            let mut convs = Vec::new();
            for (l, &c) in cfg.spectral_channels.iter().enumerate() {
                convs.push(Conv1d::new(&sr.pp(format!("conv.{l}")), input, c, 3, 1, 1, 1)?);
                input = c;
            }
            subs.push((convs, Conv1d::new(&sr.pp("score"), input, 1, 3, 1, 1, 1)?));
            stfts.push(stft);
        }
        Ok(Self { stfts, subs, slope: cfg.slope })
    }

    pub fn forward(&self, x: &Tensor) -> Result<DiscOutput> {
        let mut out = DiscOutput { scores: Vec::new(), features: Vec::new() };
        for (stft, (convs, score)) in self.stfts.iter().zip(&self.subs) {
            let (re, im) = stft.forward(x)?;
            let mag = ((re.sqr()? + im.sqr()?)? + 1e-18)?.sqrt()?;
            let spec = mag.maximum(1e-5)?.log()?.transpose(1, 2)?.contiguous()?;
            let (s, maps) = run_stack(convs, score, &spec, self.slope)?;
            out.scores.push(s);
            out.features.push(maps);
        }
        Ok(out)
    }
}

/// Both waveform discriminator banks, scored together.
#[derive(Debug, Clone)]
pub struct WaveDiscriminators {
    pub period: MultiPeriodDisc,
    pub spectral: MultiResolutionStftDisc,
}

impl WaveDiscriminators {
    pub fn new(s: &Scope, cfg: &WaveDiscConfig) -> Result<Self> {
        Ok(Self { period: MultiPeriodDisc::new(&s.pp("mpd"), cfg)?, spectral: MultiResolutionStftDisc::new(&s.pp("mrsd"), cfg)? })
    }

    pub fn forward(&self, x: &Tensor) -> Result<DiscOutput> {
        let mut a = self.period.forward(x)?;
        let b = self.spectral.forward(x)?;
        a.scores.extend(b.scores);
        a.features.extend(b.features);
        Ok(a)
    }
}

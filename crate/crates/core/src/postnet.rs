//! 16 kHz to 48 kHz bandwidth extension.
//!
//! A band-split time-frequency network predicts a full-band spectrum `H`; the output
//! spectrum is `Y = X + alpha * H`, where `alpha` is zero below the transition band,
//! ramps linearly across it and is one above the cutoff. Bins with `alpha == 0` are
//! copied from the input unchanged.

use candle_core::{DType, Device, Tensor};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::{istft, stft, Spectrogram, Waveform, WindowKind};
use crate::error::{Error, Result};
use crate::nn::spectral::{TensorStft, Trim};
use crate::nn::{Init, LayerNorm, Linear, Lstm, MultiHeadAttention, Scope};

pub const POSTNET_RATE: u32 = 48000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostnetConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub embed_dim: usize,
    pub rnn_hidden: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub fc_hz: f64,
    pub fc_bins: usize,
    pub delta_bins: usize,
    /// Width of the uniform sub-bands; the last band takes the remaining bins.
    pub band_width: usize,
    pub n_uniform_bands: usize,
}

impl Default for PostnetConfig {
    fn default() -> Self {
        Self {
            fft_size: 1536,
            hop: 768,
            embed_dim: 48,
            rnn_hidden: 100,
            n_heads: 4,
            n_blocks: 5,
            fc_hz: 8000.0,
            fc_bins: 256,
            delta_bins: 24,
            band_width: 12,
            n_uniform_bands: 62,
        }
    }
}

impl PostnetConfig {
    /// Same spectral layout with a small network.
    pub fn desk() -> Self {
        Self { embed_dim: 16, rnn_hidden: 16, n_heads: 2, n_blocks: 2, ..Self::default() }
    }

    pub fn n_freq(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        let expected = (self.fc_hz * self.fft_size as f64 / POSTNET_RATE as f64).round() as usize;
        if self.fc_bins != expected {
            return Err(Error::Config(format!("fc_bins {} does not match {} Hz (bin {expected})", self.fc_bins, self.fc_hz)));
        }
        if self.delta_bins == 0 || self.delta_bins > self.fc_bins {
            return Err(Error::Config(format!("delta_bins {} out of range", self.delta_bins)));
        }
        if self.band_width == 0 || self.n_uniform_bands * self.band_width >= self.n_freq() {
            return Err(Error::Config("band layout does not fit the spectrum".into()));
        }
        if self.n_heads == 0 || self.embed_dim % self.n_heads != 0 {
            return Err(Error::Config(format!("embed_dim {} not divisible by {} heads", self.embed_dim, self.n_heads)));
        }
        Ok(())
    }

    /// (start bin, width) of every band.
    pub fn bands(&self) -> Vec<(usize, usize)> {
        let mut v: Vec<_> = (0..self.n_uniform_bands).map(|i| (i * self.band_width, self.band_width)).collect();
        let start = self.n_uniform_bands * self.band_width;
        v.push((start, self.n_freq() - start));
        v
    }
}

/// Per-bin blend weight.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendProfile {
    pub alpha: Vec<f64>,
}

pub fn blend_profile(cfg: &PostnetConfig) -> Result<BlendProfile> {
    if cfg.delta_bins == 0 || cfg.delta_bins > cfg.fc_bins {
        return Err(Error::Config(format!("delta_bins {} out of range", cfg.delta_bins)));
    }
    let fc = cfg.fc_bins as f64;
    let delta = cfg.delta_bins as f64;
    let alpha = (0..cfg.n_freq())
        .map(|f| {
            let f = f as f64;
            if f <= fc - delta {
                0.0
            } else if f <= fc {
                (f - fc + delta) / delta
            } else {
                1.0
            }
        })
        .collect();
    Ok(BlendProfile { alpha })
}

/// `Y = X + alpha * H`, copying `X` verbatim wherever `alpha` is zero.
pub fn blend(x: &Spectrogram, h: &Spectrogram, profile: &BlendProfile) -> Result<Spectrogram> {
    if !x.same_grid(h) {
        return Err(Error::Spectrogram("blend inputs are on different grids".into()));
    }
    if profile.alpha.len() != x.n_freq() {
        return Err(Error::Spectrogram(format!("profile has {} bins, spectrogram {}", profile.alpha.len(), x.n_freq())));
    }
    let mut y = x.clone();
    for t in 0..x.n_frames() {
        for (f, &a) in profile.alpha.iter().enumerate() {
            if a != 0.0 {
                y.set(f, t, x.get(f, t) + h.get(f, t) * a);
            }
        }
    }
    Ok(y)
}

#[derive(Debug, Clone)]
struct Block {
    time_norm: LayerNorm,
    rnn: Lstm,
    rnn_out: Linear,
    band_norm: LayerNorm,
    attn: MultiHeadAttention,
}

/// Band-split refinement network.
#[derive(Debug, Clone)]
pub struct Postnet {
    cfg: PostnetConfig,
    stft: TensorStft,
    enc_w: Tensor,
    enc_b: Tensor,
    blocks: Vec<Block>,
    dec_w: Tensor,
    dec_b: Tensor,
    alpha: Tensor,
    profile: BlendProfile,
}

impl Postnet {
    pub fn new(s: &Scope, cfg: &PostnetConfig) -> Result<Self> {
        cfg.validate()?;
        let n_bands = cfg.bands().len();
        let pw = 2 * cfg.bands().iter().map(|b| b.1).max().unwrap_or(0);
        let e = cfg.embed_dim;
        let enc_bound = 1.0 / (pw as f64).sqrt();
        let dec_bound = 1.0 / (e as f64).sqrt();
        let blocks = (0..cfg.n_blocks)
            .map(|i| {
                let sb = s.pp(format!("blocks.{i}"));
                Ok(Block {
                    time_norm: LayerNorm::new(&sb.pp("time_norm"), e)?,
                    rnn: Lstm::new(&sb.pp("rnn"), e, cfg.rnn_hidden)?,
                    rnn_out: Linear::new(&sb.pp("rnn_out"), cfg.rnn_hidden, e, true)?,
                    band_norm: LayerNorm::new(&sb.pp("band_norm"), e)?,
                    attn: MultiHeadAttention::new(&sb.pp("attn"), e, cfg.n_heads)?,
                })
            })
            .collect::<Result<_>>()?;
        let profile = blend_profile(cfg)?;
        let alpha = Tensor::from_vec(profile.alpha.clone(), cfg.n_freq(), s.device())?.to_dtype(s.dtype())?;
        Ok(Self {
            cfg: cfg.clone(),
            stft: TensorStft::new(cfg.fft_size, cfg.hop, s.dtype(), s.device())?,
            enc_w: s.param("encoder.weight", &[n_bands, pw, e], Init::Uniform(enc_bound))?,
            enc_b: s.param("encoder.bias", &[n_bands, 1, e], Init::Zeros)?,
            blocks,
            dec_w: s.param("decoder.weight", &[n_bands, e, pw], Init::Uniform(dec_bound))?,
            dec_b: s.param("decoder.bias", &[n_bands, 1, pw], Init::Zeros)?,
            alpha,
            profile,
        })
    }

    pub fn config(&self) -> &PostnetConfig {
        &self.cfg
    }

    pub fn profile(&self) -> &BlendProfile {
        &self.profile
    }

    /// (batch, frames, bins) real/imag to (bands, batch*frames, 2*max_width).
    fn split(&self, re: &Tensor, im: &Tensor) -> Result<Tensor> {
        let (b, t, _) = re.dims3()?;
        let bands = self.cfg.bands();
        let maxw = bands.iter().map(|x| x.1).max().unwrap_or(0);
        let uniform = self.cfg.n_uniform_bands * self.cfg.band_width;
        let part = |x: &Tensor| -> Result<Tensor> {
            let head = x
                .narrow(2, 0, uniform)?
                .reshape((b, t, self.cfg.n_uniform_bands, self.cfg.band_width))?
                .pad_with_zeros(3, 0, maxw - self.cfg.band_width)?;
            let tail = x.narrow(2, uniform, self.cfg.n_freq() - uniform)?.unsqueeze(2)?;
            let tail = tail.pad_with_zeros(3, 0, maxw - tail.dim(3)?)?;
            Ok(Tensor::cat(&[head, tail], 2)?)
        };
        let z = Tensor::cat(&[part(re)?, part(im)?], 3)?;
        Ok(z.permute((2, 0, 1, 3))?.contiguous()?.reshape((bands.len(), b * t, 2 * maxw))?)
    }

    /// Inverse of [`Self::split`].
    fn merge(&self, z: &Tensor, b: usize, t: usize) -> Result<(Tensor, Tensor)> {
        let bands = self.cfg.bands();
        let maxw = bands.iter().map(|x| x.1).max().unwrap_or(0);
        let z = z.reshape((bands.len(), b, t, 2 * maxw))?;
        let mut re = Vec::with_capacity(bands.len());
        let mut im = Vec::with_capacity(bands.len());
        for (i, &(_, w)) in bands.iter().enumerate() {
            let band = z.narrow(0, i, 1)?.squeeze(0)?;
            re.push(band.narrow(2, 0, w)?);
            im.push(band.narrow(2, maxw, w)?);
        }
        Ok((Tensor::cat(&re, 2)?, Tensor::cat(&im, 2)?))
    }

    /// Network prediction `H` for (batch, frames, bins) input spectra.
    pub fn predict(&self, re: &Tensor, im: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, t, _) = re.dims3()?;
        let nb = self.cfg.bands().len();
        let e = self.cfg.embed_dim;
        let x = self.split(re, im)?;
        // (bands, b*t, e) -> (b*bands, t, e)
        let mut z = x.matmul(&self.enc_w)?.broadcast_add(&self.enc_b)?;
        z = z.reshape((nb, b, t, e))?.permute((1, 0, 2, 3))?.contiguous()?.reshape((b * nb, t, e))?;
        for blk in &self.blocks {
            let h = blk.rnn_out.forward(&blk.rnn.forward(&blk.time_norm.forward(&z)?)?)?;
            z = (z + h)?;
            let across = z.reshape((b, nb, t, e))?.transpose(1, 2)?.contiguous()?.reshape((b * t, nb, e))?;
            let across = (&across + blk.attn.forward(&blk.band_norm.forward(&across)?)?)?;
            z = across.reshape((b, t, nb, e))?.transpose(1, 2)?.contiguous()?.reshape((b * nb, t, e))?;
        }
        let z = z.reshape((b, nb, t, e))?.transpose(0, 1)?.contiguous()?.reshape((nb, b * t, e))?;
        let out = z.matmul(&self.dec_w)?.broadcast_add(&self.dec_b)?;
        self.merge(&out, b, t)
    }

    /// Differentiable forward on (batch, samples) 48 kHz audio; output has the same length.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, len) = x.dims2()?;
        let (re, im) = self.stft.forward(x)?;
        let (hr, hi) = self.predict(&re, &im)?;
        let yr = (&re + hr.broadcast_mul(&self.alpha)?)?;
        let yi = (&im + hi.broadcast_mul(&self.alpha)?)?;
        self.stft.inverse(&yr, &yi, Trim::Center, len)
    }

    /// Inference path: the network runs in its parameter dtype, the blend and synthesis
    /// run in double precision on the reference STFT.
    pub fn enhance(&self, wave: &Waveform) -> Result<Waveform> {
        if wave.rate() != POSTNET_RATE {
            return Err(Error::RateMismatch { left: wave.rate(), right: POSTNET_RATE });
        }
        let x_spec = stft(wave, self.cfg.fft_size, self.cfg.hop, WindowKind::Hann)?;
        let h_spec = self.predict_spectrogram(&x_spec)?;
        let y = blend(&x_spec, &h_spec, &self.profile)?;
        istft(&y, wave.len())
    }

    /// Runs the network on a reference spectrogram and returns `H` on the same grid.
    pub fn predict_spectrogram(&self, x_spec: &Spectrogram) -> Result<Spectrogram> {
        let t = x_spec.n_frames();
        let f = x_spec.n_freq();
        let dtype = self.enc_w.dtype();
        let re: Vec<f64> = x_spec.bins().iter().map(|c| c.re).collect();
        let im: Vec<f64> = x_spec.bins().iter().map(|c| c.im).collect();
        let re = Tensor::from_vec(re, (1, t, f), &Device::Cpu)?.to_dtype(dtype)?;
        let im = Tensor::from_vec(im, (1, t, f), &Device::Cpu)?.to_dtype(dtype)?;
        let (hr, hi) = self.predict(&re, &im)?;
        let hr = hr.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        let hi = hi.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        let bins = hr.into_iter().zip(hi).map(|(a, b)| Complex64::new(a, b)).collect();
        Spectrogram::from_bins(bins, t, x_spec.fft_size(), x_spec.hop(), x_spec.rate(), x_spec.window())
    }
}

//! STFT, inverse STFT and log-Mel features as differentiable tensor ops.
//!
//! Frames are cut by reshaping the padded signal into hop-sized chunks, so the FFT
//! size must be a multiple of the hop. Transforms are matmuls against windowed DFT
//! bases, which keeps every step inside what `candle` can backpropagate through.

use std::f64::consts::PI;

use candle_core::{DType, Device, Tensor};

use crate::dsp::{check_window_hop, hann_window, mel_filterbank, MelConfig, LOG_MEL_FLOOR};
use crate::error::{Error, Result};

/// Where the synthesized signal starts relative to the first frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trim {
    /// Frames are centered on multiples of the hop; matches [`crate::dsp::stft`].
    Center,
    /// Drops (fft - hop) / 2 samples, giving exactly frames * hop samples.
    Same,
}

/// Precomputed bases for one (fft_size, hop) pair.
#[derive(Debug, Clone)]
pub struct TensorStft {
    fft_size: usize,
    hop: usize,
    fwd_cos: Tensor,
    fwd_sin: Tensor,
    inv_cos: Tensor,
    inv_sin: Tensor,
    window: Vec<f64>,
    dtype: DType,
}

impl TensorStft {
    pub fn new(fft_size: usize, hop: usize, dtype: DType, device: &Device) -> Result<Self> {
        if fft_size % 2 != 0 || hop == 0 || fft_size % hop != 0 {
            return Err(Error::InvalidWindowHop { fft_size, hop });
        }
        let window = hann_window(fft_size);
        check_window_hop(&window, hop)?;
        let n_freq = fft_size / 2 + 1;
        let n = fft_size as f64;
        let mut fc = vec![0.0; fft_size * n_freq];
        let mut fs = vec![0.0; fft_size * n_freq];
        let mut ic = vec![0.0; n_freq * fft_size];
        let mut is = vec![0.0; n_freq * fft_size];
        for t in 0..fft_size {
            for k in 0..n_freq {
                let angle = 2.0 * PI * ((t * k) % fft_size) as f64 / n;
                fc[t * n_freq + k] = window[t] * angle.cos();
                fs[t * n_freq + k] = -window[t] * angle.sin();
                let weight = if k == 0 || k == fft_size / 2 { 1.0 } else { 2.0 };
                ic[k * fft_size + t] = weight * angle.cos() / n * window[t];
                is[k * fft_size + t] = if k == 0 || k == fft_size / 2 { 0.0 } else { -weight * angle.sin() / n * window[t] };
            }
        }
        let mk = |v: Vec<f64>, r: usize, c: usize| -> Result<Tensor> {
            Ok(Tensor::from_vec(v, (r, c), device)?.to_dtype(dtype)?)
        };
        Ok(Self {
            fft_size,
            hop,
            fwd_cos: mk(fc, fft_size, n_freq)?,
            fwd_sin: mk(fs, fft_size, n_freq)?,
            inv_cos: mk(ic, n_freq, fft_size)?,
            inv_sin: mk(is, n_freq, fft_size)?,
            window,
            dtype,
        })
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn n_freq(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn n_frames(&self, len: usize) -> usize {
        1 + len / self.hop
    }

    /// (batch, samples) to real and imaginary parts, each (batch, frames, bins), with
    /// the same centered framing as [`crate::dsp::stft`].
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, len) = x.dims2()?;
        let frames = self.n_frames(len);
        let r = self.fft_size / self.hop;
        let chunks = frames + r - 1;
        let half = self.fft_size / 2;
        let padded = x.pad_with_zeros(1, half, half)?.narrow(1, 0, chunks * self.hop)?;
        let chunked = padded.reshape((b, chunks, self.hop))?;
        let pieces: Vec<Tensor> = (0..r).map(|j| chunked.narrow(1, j, frames)).collect::<candle_core::Result<_>>()?;
        let framed = Tensor::cat(&pieces, 2)?.reshape((b * frames, self.fft_size))?;
        let re = framed.matmul(&self.fwd_cos)?.reshape((b, frames, self.n_freq()))?;
        let im = framed.matmul(&self.fwd_sin)?.reshape((b, frames, self.n_freq()))?;
        Ok((re, im))
    }

    /// Overlap-add synthesis from (batch, frames, bins) real/imaginary parts, normalized
    /// by the squared-window envelope.
    pub fn inverse(&self, re: &Tensor, im: &Tensor, trim: Trim, out_len: usize) -> Result<Tensor> {
        let (b, frames, f) = re.dims3()?;
        if f != self.n_freq() {
            return Err(Error::Spectrogram(format!("{f} bins inconsistent with fft_size {}", self.fft_size)));
        }
        let r = self.fft_size / self.hop;
        let re2 = re.reshape((b * frames, f))?;
        let im2 = im.reshape((b * frames, f))?;
        let time = (re2.matmul(&self.inv_cos)? + im2.matmul(&self.inv_sin)?)?.reshape((b, frames, r, self.hop))?;
        let chunks = frames + r - 1;
        let mut acc: Option<Tensor> = None;
        for j in 0..r {
            let piece = time.narrow(2, j, 1)?.squeeze(2)?.pad_with_zeros(1, j, r - 1 - j)?;
            acc = Some(match acc {
                Some(a) => (a + piece)?,
                None => piece,
            });
        }
        let total = chunks * self.hop;
        let signal = acc.expect("at least one chunk").reshape((b, total))?;
        let offset = self.offset(trim);
        let (_, env) = self.overlap_sums(frames);
        let env_peak = env.iter().cloned().fold(0.0, f64::max);
        let inv_env: Vec<f64> = env.iter().map(|&e| if e > 1e-10 * env_peak { 1.0 / e } else { 0.0 }).collect();
        let inv_env = Tensor::from_vec(inv_env, (1, total), signal.device())?.to_dtype(self.dtype)?;
        let normalized = signal.broadcast_mul(&inv_env)?;
        let avail = total.saturating_sub(offset).min(out_len);
        let body = normalized.narrow(1, offset, avail)?;
        Ok(if avail < out_len { body.pad_with_zeros(1, 0, out_len - avail)? } else { body })
    }

    /// Bound on |output| for magnitudes at most `max_mag`: every bin contributes at most
    /// its magnitude times the largest synthesis weight, divided by the smallest envelope.
    pub fn amplitude_bound(&self, max_mag: f64, trim: Trim, frames: usize) -> f64 {
        let (weight, env) = self.overlap_sums(frames);
        let offset = self.offset(trim);
        let end = env.len().min(offset + frames * self.hop);
        let worst = (offset..end).filter(|&i| env[i] > 0.0).map(|i| weight[i] / env[i]).fold(0.0, f64::max);
        max_mag * worst
    }

    fn offset(&self, trim: Trim) -> usize {
        match trim {
            Trim::Center => self.fft_size / 2,
            Trim::Same => (self.fft_size - self.hop) / 2,
        }
    }

    /// Overlap-added window and squared window for `frames` frames.
    fn overlap_sums(&self, frames: usize) -> (Vec<f64>, Vec<f64>) {
        let total = (frames + self.fft_size / self.hop - 1) * self.hop;
        let mut weight = vec![0.0; total];
        let mut env = vec![0.0; total];
        for t in 0..frames {
            for (n, w) in self.window.iter().enumerate() {
                weight[t * self.hop + n] += w;
                env[t * self.hop + n] += w * w;
            }
        }
        (weight, env)
    }
}

/// Log-Mel features of (batch, samples) audio as (batch, frames, mels).
#[derive(Debug, Clone)]
pub struct TensorMel {
    stft: TensorStft,
    filterbank: Tensor,
    cfg: MelConfig,
}

impl TensorMel {
    pub fn new(cfg: MelConfig, dtype: DType, device: &Device) -> Result<Self> {
        let fb = mel_filterbank(&cfg)?;
        let n_freq = cfg.n_freq();
        let mut flat = vec![0.0; n_freq * cfg.n_mels];
        for (m, row) in fb.iter().enumerate() {
            for (k, w) in row.iter().enumerate() {
                flat[k * cfg.n_mels + m] = *w;
            }
        }
        Ok(Self {
            stft: TensorStft::new(cfg.fft_size, cfg.hop, dtype, device)?,
            filterbank: Tensor::from_vec(flat, (n_freq, cfg.n_mels), device)?.to_dtype(dtype)?,
            cfg,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (re, im) = self.stft.forward(x)?;
        let mag = ((re.sqr()? + im.sqr()?)? + 1e-18)?.sqrt()?;
        let (b, t, f) = mag.dims3()?;
        let mel = mag.reshape((b * t, f))?.matmul(&self.filterbank)?.reshape((b, t, self.cfg.n_mels))?;
        Ok(mel.maximum(LOG_MEL_FLOOR)?.log()?)
    }
}

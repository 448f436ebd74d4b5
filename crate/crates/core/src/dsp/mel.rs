//! HTK-scale triangular Mel filterbanks and log-Mel spectrograms.

use serde::{Deserialize, Serialize};

use super::stft::{stft, WindowKind};
use super::Waveform;
use crate::error::{Error, Result};

/// Mel magnitudes are clamped to this value before the natural log.
pub const LOG_MEL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub rate: u32,
    pub fmin: f64,
    pub fmax: f64,
}

impl MelConfig {
    /// Full-band config with hop = fft/4.
    pub fn full_band(fft_size: usize, n_mels: usize, rate: u32) -> Self {
        Self { fft_size, hop: fft_size / 4, n_mels, rate, fmin: 0.0, fmax: rate as f64 / 2.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 {
            return Err(Error::Config("n_mels must be at least 1".into()));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.rate as f64 / 2.0) {
            return Err(Error::Config(format!(
                "mel band [{}, {}] invalid for rate {}",
                self.fmin, self.fmax, self.rate
            )));
        }
        Ok(())
    }

    pub fn n_freq(&self) -> usize {
        self.fft_size / 2 + 1
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `(n_mels, F)` filterbank with unit-peak triangles.
pub fn mel_filterbank(cfg: &MelConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.rate as f64 / cfg.fft_size as f64;
    Ok((0..cfg.n_mels)
        .map(|m| {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..cfg.n_freq())
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let up = (f - l) / (c - l);
                    let down = (r - f) / (r - c);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect())
}

/// Log-Mel magnitudes as an `(n_mels, T)` matrix.
pub fn mel_spectrogram(wave: &Waveform, cfg: &MelConfig) -> Result<Vec<Vec<f64>>> {
    if wave.rate() != cfg.rate {
        return Err(Error::RateMismatch { left: wave.rate(), right: cfg.rate });
    }
    let fb = mel_filterbank(cfg)?;
    let spec = stft(wave, cfg.fft_size, cfg.hop, WindowKind::Hann)?;
    let t_frames = spec.n_frames();
    let mut out = vec![vec![0.0; t_frames]; cfg.n_mels];
    for t in 0..t_frames {
        let mags: Vec<f64> = spec.frame(t).iter().map(|c| c.norm()).collect();
        for (m, row) in fb.iter().enumerate() {
            let e: f64 = row.iter().zip(&mags).map(|(w, a)| w * a).sum();
            out[m][t] = e.max(LOG_MEL_FLOOR).ln();
        }
    }
    Ok(out)
}

//! Deterministic signal primitives shared by every stage.

mod filter;
mod mel;
mod resample;
mod stft;
pub mod wav;

pub use filter::{apply_fir, bessel_i0, kaiser_beta, kaiser_lowpass, LowpassSpec};
pub use mel::{hz_to_mel, mel_filterbank, mel_spectrogram, mel_to_hz, MelConfig, LOG_MEL_FLOOR};
pub use resample::{resample, resampled_len, RESAMPLER_STOPBAND_DB};
pub use stft::{check_window_hop, hann_window, istft, stft, synthesis_envelope, Spectrogram, WindowKind};

use crate::error::{Error, Result};

/// Rates accepted at pipeline boundaries.
pub const BOUNDARY_RATES: [u32; 7] = [8000, 16000, 22050, 24000, 32000, 44100, 48000];

/// Mono audio with its sampling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, rate: u32) -> Result<Self> {
        if rate == 0 {
            return Err(Error::InvalidRate(rate));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { samples, rate })
    }

    pub fn zeros(len: usize, rate: u32) -> Result<Self> {
        Self::new(vec![0.0; len], rate)
    }

    pub fn from_f32(samples: &[f32], rate: u32) -> Result<Self> {
        Self::new(samples.iter().map(|&x| x as f64).collect(), rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn rate(&self) -> u32 {
        self.rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.rate as f64
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.samples.iter().map(|&x| x as f32).collect()
    }

    /// Mean power.
    pub fn power(&self) -> f64 {
        power(&self.samples)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Applies `f` sample-wise; the result must stay finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.samples.iter().map(|&x| f(x)).collect(), self.rate)
    }

    /// Zero-pads or truncates to exactly `len` samples.
    pub fn fit_to(&self, len: usize) -> Self {
        let mut s = self.samples.clone();
        s.resize(len, 0.0);
        Self { samples: s, rate: self.rate }
    }

    pub fn slice(&self, start: usize, len: usize) -> Self {
        let end = (start + len).min(self.samples.len());
        let start = start.min(end);
        Self { samples: self.samples[start..end].to_vec(), rate: self.rate }
    }
}

pub fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// `10·log10(P_signal / P_noise)`.
pub fn snr_db(signal: &Waveform, noise: &Waveform) -> Result<f64> {
    if signal.len() != noise.len() {
        return Err(Error::LengthMismatch { left: signal.len(), right: noise.len() });
    }
    if signal.rate() != noise.rate() {
        return Err(Error::RateMismatch { left: signal.rate(), right: noise.rate() });
    }
    let pn = noise.power();
    if pn <= 0.0 {
        return Err(Error::ZeroPower("noise"));
    }
    Ok(10.0 * (signal.power() / pn).log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_and_zero_rate() {
        assert!(matches!(Waveform::new(vec![0.0, f64::NAN], 16000), Err(Error::NonFinite(1))));
        assert!(matches!(Waveform::new(vec![0.0], 0), Err(Error::InvalidRate(0))));
    }

    #[test]
    fn snr_equal_power_is_zero() {
        let a = Waveform::new(vec![1.0, -1.0, 1.0, -1.0], 8000).unwrap();
        let b = Waveform::new(vec![-1.0, 1.0, 1.0, -1.0], 8000).unwrap();
        assert!(snr_db(&a, &b).unwrap().abs() < 1e-12);
    }

    #[test]
    fn snr_drops_20db_when_noise_scaled_by_10() {
        let s = Waveform::new((0..100).map(|i| (i as f64 * 0.3).sin()).collect(), 8000).unwrap();
        let n = Waveform::new((0..100).map(|i| (i as f64 * 1.7).cos() * 0.1).collect(), 8000).unwrap();
        let n10 = n.map(|x| x * 10.0).unwrap();
        let d = snr_db(&s, &n).unwrap() - snr_db(&s, &n10).unwrap();
        assert!((d - 20.0).abs() < 1e-9);
    }

    #[test]
    fn snr_rejects_silent_noise() {
        let s = Waveform::new(vec![1.0; 8], 8000).unwrap();
        let n = Waveform::zeros(8, 8000).unwrap();
        assert!(matches!(snr_db(&s, &n), Err(Error::ZeroPower("noise"))));
    }
}

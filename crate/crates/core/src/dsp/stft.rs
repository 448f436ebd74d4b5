//! Center-padded STFT and weighted overlap-add inverse.
//!
//! Framing: the signal is zero-padded by `fft_size / 2` on both sides and frame
//! `t` starts at padded index `t * hop`, giving `1 + floor(len / hop)` frames.
//! The inverse applies the synthesis window, overlap-adds and divides by the
//! summed squared window, so any window/hop pair whose squared-window envelope
//! never vanishes reconstructs exactly.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Hann,
}

impl WindowKind {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            WindowKind::Hann => hann_window(n),
        }
    }
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let s = (std::f64::consts::PI * i as f64 / n as f64).sin();
            s * s
        })
        .collect()
}

/// One period (`hop` samples) of `sum_m w²(n - m·hop)`.
pub fn synthesis_envelope(window: &[f64], hop: usize) -> Vec<f64> {
    let mut env = vec![0.0; hop];
    for (i, w) in window.iter().enumerate() {
        env[i % hop] += w * w;
    }
    env
}

pub fn check_window_hop(window: &[f64], hop: usize) -> Result<()> {
    let fft_size = window.len();
    if hop == 0 || hop > fft_size || fft_size < 2 {
        return Err(Error::InvalidWindowHop { fft_size, hop });
    }
    let env = synthesis_envelope(window, hop);
    let max = env.iter().cloned().fold(0.0, f64::max);
    let min = env.iter().cloned().fold(f64::INFINITY, f64::min);
    if max <= 0.0 || min < 1e-6 * max {
        return Err(Error::InvalidWindowHop { fft_size, hop });
    }
    Ok(())
}

/// One-sided complex spectrogram, stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    bins: Vec<Complex64>,
    n_freq: usize,
    n_frames: usize,
    fft_size: usize,
    hop: usize,
    rate: u32,
    window: WindowKind,
}

impl Spectrogram {
    pub fn from_bins(
        bins: Vec<Complex64>,
        n_frames: usize,
        fft_size: usize,
        hop: usize,
        rate: u32,
        window: WindowKind,
    ) -> Result<Self> {
        let n_freq = fft_size / 2 + 1;
        if fft_size % 2 != 0 {
            return Err(Error::Spectrogram(format!("fft_size {fft_size} must be even")));
        }
        if hop == 0 || hop > fft_size {
            return Err(Error::InvalidWindowHop { fft_size, hop });
        }
        if bins.len() != n_freq * n_frames {
            return Err(Error::Spectrogram(format!(
                "{} bins do not form {n_frames} frames of {n_freq}",
                bins.len()
            )));
        }
        Ok(Self { bins, n_freq, n_frames, fft_size, hop, rate, window })
    }

    pub fn zeros_like(&self) -> Self {
        Self { bins: vec![Complex64::new(0.0, 0.0); self.bins.len()], ..self.clone() }
    }

    pub fn n_freq(&self) -> usize {
        self.n_freq
    }
    pub fn n_frames(&self) -> usize {
        self.n_frames
    }
    pub fn fft_size(&self) -> usize {
        self.fft_size
    }
    pub fn hop(&self) -> usize {
        self.hop
    }
    pub fn rate(&self) -> u32 {
        self.rate
    }
    pub fn window(&self) -> WindowKind {
        self.window
    }

    pub fn get(&self, f: usize, t: usize) -> Complex64 {
        self.bins[t * self.n_freq + f]
    }

    pub fn set(&mut self, f: usize, t: usize, v: Complex64) {
        self.bins[t * self.n_freq + f] = v;
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.bins[t * self.n_freq..(t + 1) * self.n_freq]
    }

    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    /// Center frequency of bin `f` in Hz.
    pub fn bin_hz(&self, f: usize) -> f64 {
        f as f64 * self.rate as f64 / self.fft_size as f64
    }

    /// True when both grids share shape and analysis parameters.
    pub fn same_grid(&self, other: &Spectrogram) -> bool {
        self.n_freq == other.n_freq
            && self.n_frames == other.n_frames
            && self.fft_size == other.fft_size
            && self.hop == other.hop
            && self.rate == other.rate
            && self.window == other.window
    }

    /// Magnitudes as an `(F, T)` row-major matrix.
    pub fn magnitude(&self) -> Vec<Vec<f64>> {
        (0..self.n_freq)
            .map(|f| (0..self.n_frames).map(|t| self.get(f, t).norm()).collect())
            .collect()
    }
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    }
}

pub fn n_frames_for(len: usize, hop: usize) -> usize {
    1 + len / hop
}

pub fn stft(wave: &Waveform, fft_size: usize, hop: usize, window: WindowKind) -> Result<Spectrogram> {
    if fft_size % 2 != 0 {
        return Err(Error::Spectrogram(format!("fft_size {fft_size} must be even")));
    }
    let win = window.coefficients(fft_size);
    check_window_hop(&win, hop)?;
    let x = wave.samples();
    if x.len() < fft_size {
        return Err(Error::SignalTooShort { len: x.len(), needed: fft_size });
    }
    let pad = fft_size / 2;
    let n_frames = n_frames_for(x.len(), hop);
    let n_freq = fft_size / 2 + 1;
    let fft = plan(fft_size, false);
    let mut bins = Vec::with_capacity(n_freq * n_frames);
    let mut buf = vec![Complex64::new(0.0, 0.0); fft_size];
    for t in 0..n_frames {
        let start = (t * hop) as isize - pad as isize;
        for (n, b) in buf.iter_mut().enumerate() {
            let i = start + n as isize;
            let v = if i >= 0 && (i as usize) < x.len() { x[i as usize] } else { 0.0 };
            *b = Complex64::new(v * win[n], 0.0);
        }
        fft.process(&mut buf);
        bins.extend_from_slice(&buf[..n_freq]);
    }
    Spectrogram::from_bins(bins, n_frames, fft_size, hop, wave.rate(), window)
}

/// Inverse of [`stft`]; the imaginary parts of the DC and Nyquist bins are ignored.
pub fn istft(spec: &Spectrogram, out_len: usize) -> Result<Waveform> {
    let fft_size = spec.fft_size();
    let hop = spec.hop();
    if spec.n_freq() != fft_size / 2 + 1 {
        return Err(Error::Spectrogram(format!(
            "{} bins inconsistent with fft_size {fft_size}",
            spec.n_freq()
        )));
    }
    let win = spec.window().coefficients(fft_size);
    check_window_hop(&win, hop)?;
    let n_frames = spec.n_frames();
    let total = (n_frames.max(1) - 1) * hop + fft_size;
    let mut out = vec![0.0; total];
    let mut env = vec![0.0; total];
    let ifft = plan(fft_size, true);
    let mut buf = vec![Complex64::new(0.0, 0.0); fft_size];
    let half = fft_size / 2;
    for t in 0..n_frames {
        let frame = spec.frame(t);
        buf[0] = Complex64::new(frame[0].re, 0.0);
        buf[half] = Complex64::new(frame[half].re, 0.0);
        for k in 1..half {
            buf[k] = frame[k];
            buf[fft_size - k] = frame[k].conj();
        }
        ifft.process(&mut buf);
        let off = t * hop;
        for n in 0..fft_size {
            out[off + n] += buf[n].re / fft_size as f64 * win[n];
            env[off + n] += win[n] * win[n];
        }
    }
    let samples = (0..out_len)
        .map(|i| {
            let j = i + half;
            if j < total && env[j] > 1e-10 {
                out[j] / env[j]
            } else {
                0.0
            }
        })
        .collect();
    Waveform::new(samples, spec.rate())
}

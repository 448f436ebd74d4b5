//! Kaiser-windowed sinc FIR design and zero-phase application.

use std::f64::consts::PI;

/// Zeroth-order modified Bessel function of the first kind (power series).
pub fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Kaiser β for a target stopband attenuation in dB.
pub fn kaiser_beta(atten_db: f64) -> f64 {
    if atten_db > 50.0 {
        0.1102 * (atten_db - 8.7)
    } else if atten_db >= 21.0 {
        0.5842 * (atten_db - 21.0).powf(0.4) + 0.07886 * (atten_db - 21.0)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowpassSpec {
    /// Passband edge in Hz.
    pub pass_hz: f64,
    /// Stopband edge in Hz.
    pub stop_hz: f64,
    pub atten_db: f64,
}

impl LowpassSpec {
    /// Odd-length, unit-DC-gain taps for sampling rate `rate`.
    pub fn design(&self, rate: f64) -> Vec<f64> {
        let fc = 0.5 * (self.pass_hz + self.stop_hz) / rate;
        let tw = (self.stop_hz - self.pass_hz) / rate;
        kaiser_lowpass(fc, tw, self.atten_db, 1.0)
    }
}

/// Windowed-sinc lowpass with cutoff `fc` and transition width `tw`, both in cycles
/// per sample. Taps are normalized so their sum equals `gain`.
pub fn kaiser_lowpass(fc: f64, tw: f64, atten_db: f64, gain: f64) -> Vec<f64> {
    let dw = 2.0 * PI * tw;
    let mut n = ((atten_db - 7.95) / (2.285 * dw)).ceil() as usize + 1;
    if n % 2 == 0 {
        n += 1;
    }
    let n = n.max(3);
    let beta = kaiser_beta(atten_db);
    let m = (n - 1) as f64 / 2.0;
    let i0b = bessel_i0(beta);
    let mut h: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 - m;
            let sinc = if t == 0.0 { 2.0 * fc } else { (2.0 * PI * fc * t).sin() / (PI * t) };
            let r = t / m;
            let w = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0b;
            sinc * w
        })
        .collect();
    let s: f64 = h.iter().sum();
    for v in &mut h {
        *v *= gain / s;
    }
    h
}

/// Zero-phase filtering with an odd-length symmetric FIR; output has the input length.
pub fn apply_fir(x: &[f64], taps: &[f64]) -> Vec<f64> {
    let m = taps.len() / 2;
    let n = x.len();
    (0..n)
        .map(|i| {
            let lo = (i + m).saturating_sub(n - 1);
            let hi = (i + m).min(taps.len() - 1);
            let mut acc = 0.0;
            for k in lo..=hi {
                acc += taps[k] * x[i + m - k];
            }
            acc
        })
        .collect()
}

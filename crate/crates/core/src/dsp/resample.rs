//! Rational-ratio polyphase resampling.
//!
//! The ratio `to / from` is reduced by its gcd to `up / down` (44.1 kHz to 48 kHz
//! becomes 160/147). A single Kaiser-windowed sinc prototype is designed at the
//! virtual rate `from * up` with its passband edge at 0.45 and stopband edge at
//! 0.55 of the lower of the two rates, and evaluated only at the taps each output
//! sample touches.

use super::filter::kaiser_lowpass;
use super::Waveform;
use crate::error::{Error, Result};

/// Stopband attenuation of the prototype filter; passband ripple is below 0.001 dB.
pub const RESAMPLER_STOPBAND_DB: f64 = 80.0;
/// Passband edge as a fraction of the lower rate.
pub const RESAMPLER_PASSBAND: f64 = 0.45;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `round(len * to / from)`, halves rounded up.
pub fn resampled_len(len: usize, from: u32, to: u32) -> usize {
    ((len as u128 * to as u128 * 2 + from as u128) / (2 * from as u128)) as usize
}

pub fn resample(wave: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::InvalidRate(target_rate));
    }
    let from = wave.rate();
    if from == target_rate {
        return Ok(wave.clone());
    }
    let g = gcd(from as u64, target_rate as u64);
    let up = target_rate as u64 / g;
    let down = from as u64 / g;
    let fmin = from.min(target_rate) as f64;
    let virtual_rate = from as f64 * up as f64;
    let taps = kaiser_lowpass(
        0.5 * fmin / virtual_rate,
        2.0 * (0.5 - RESAMPLER_PASSBAND) * fmin / virtual_rate,
        RESAMPLER_STOPBAND_DB,
        up as f64,
    );
    let n_taps = taps.len() as i64;
    let half = (n_taps - 1) / 2;
    let x = wave.samples();
    let len = x.len() as i64;
    let up = up as i64;
    let down = down as i64;
    let out_len = resampled_len(x.len(), from, target_rate);
    let out = (0..out_len as i64)
        .map(|n| {
            let center = n * down + half;
            // taps index = center - j*up must lie in [0, n_taps)
            let j_lo = (center - (n_taps - 1) + up - 1).div_euclid(up).max(0);
            let j_hi = center.div_euclid(up).min(len - 1);
            let mut acc = 0.0;
            let mut j = j_lo;
            while j <= j_hi {
                acc += x[j as usize] * taps[(center - j * up) as usize];
                j += 1;
            }
            acc
        })
        .collect();
    Waveform::new(out, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(freq: f64, rate: u32, len: usize) -> Waveform {
        Waveform::new((0..len).map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin()).collect(), rate)
            .unwrap()
    }

    /// Frequency estimate from the count of sign changes over the middle of the signal.
    fn zero_crossing_freq(x: &[f64], rate: u32) -> f64 {
        let lo = x.len() / 10;
        let hi = x.len() - x.len() / 10;
        let seg = &x[lo..hi];
        let idx: Vec<f64> = seg
            .windows(2)
            .enumerate()
            .filter(|(_, w)| (w[0] < 0.0) != (w[1] < 0.0))
            .map(|(i, w)| i as f64 + w[0] / (w[0] - w[1]))
            .collect();
        let span = idx.last().unwrap() - idx.first().unwrap();
        (idx.len() - 1) as f64 / 2.0 / (span / rate as f64)
    }

    #[test]
    fn third_length_for_48k_to_16k() {
        let w = tone(440.0, 48000, 48000 * 3);
        let y = resample(&w, 16000).unwrap();
        assert_eq!(y.len(), 48000);
        assert_eq!(y.rate(), 16000);
    }

    #[test]
    fn same_rate_is_bit_identical() {
        let w = tone(440.0, 22050, 1000);
        assert_eq!(resample(&w, 22050).unwrap(), w);
    }

    #[test]
    fn preserves_tone_frequency_44k1_to_16k() {
        let w = tone(5000.0, 44100, 44100);
        let y = resample(&w, 16000).unwrap();
        let f = zero_crossing_freq(y.samples(), 16000);
        assert!((f - 5000.0).abs() / 5000.0 < 1e-3, "{f}");
    }

    #[test]
    fn rational_factorization_44k1_48k() {
        assert_eq!(gcd(44100, 48000), 300);
        let w = tone(1000.0, 44100, 4410);
        let y = resample(&w, 48000).unwrap();
        assert_eq!(y.len(), 4800);
        let z = resample(&y, 44100).unwrap();
        assert_eq!(z.len(), 4410);
        let err: f64 = z.samples()[400..4000]
            .iter()
            .zip(&w.samples()[400..4000])
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / w.samples()[400..4000].iter().map(|b| b * b).sum::<f64>();
        assert!(err.sqrt() < 1e-3);
    }

    #[test]
    fn rejects_zero_rate() {
        assert!(resample(&tone(1.0, 8000, 10), 0).is_err());
    }

    #[test]
    fn stopband_attenuation_on_downsampling() {
        // 12 kHz would alias to 4 kHz; it sits beyond the 8.8 kHz stopband edge
        let w = tone(12000.0, 48000, 48000);
        let y = resample(&w, 16000).unwrap();
        let p: f64 = y.samples()[2000..14000].iter().map(|v| v * v).sum::<f64>() / 12000.0;
        assert!(10.0 * (p / 0.5).log10() < -RESAMPLER_STOPBAND_DB + 1.0);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(12))]
        #[test]
        fn up_down_composition(seed in 0u64..500, r in proptest::sample::select(vec![8000u32, 16000, 22050, 24000])) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let len = 4000;
            // band-limited: a handful of tones below 0.45 * r
            let comps: Vec<(f64, f64, f64)> = (0..6)
                .map(|_| (rng.gen_range(20.0..0.45 * r as f64), rng.gen_range(0.1..1.0), rng.gen_range(0.0..6.28)))
                .collect();
            let x: Vec<f64> = (0..len)
                .map(|i| comps.iter().map(|(f, a, p)| a * (2.0 * PI * f * i as f64 / r as f64 + p).sin()).sum())
                .collect();
            let w = Waveform::new(x.clone(), r).unwrap();
            let back = resample(&resample(&w, 2 * r).unwrap(), r).unwrap();
            proptest::prop_assert_eq!(back.len(), len);
            let (lo, hi) = (400, len - 400);
            let num: f64 = (lo..hi).map(|i| (back.samples()[i] - x[i]).powi(2)).sum();
            let den: f64 = (lo..hi).map(|i| x[i] * x[i]).sum();
            proptest::prop_assert!((num / den).sqrt() <= 1e-3, "{}", (num / den).sqrt());
        }
    }
}

//! Procedural audio for desk-scale runs: speech-like utterances, noise, wind and
//! room impulse responses, all rendered directly at the requested rate from a seed.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::degrade::{Banks, CodecBackend, CorpusManifest, ManifestEntry, Role};
use crate::dsp::wav::{write_wav, WavEncoding};
use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::rng;

/// Formant frequencies (Hz) of a handful of vowels.
const VOWELS: [[f64; 4]; 6] = [
    [730.0, 1090.0, 2440.0, 3400.0],
    [270.0, 2290.0, 3010.0, 3700.0],
    [300.0, 870.0, 2240.0, 3300.0],
    [530.0, 1840.0, 2480.0, 3500.0],
    [570.0, 840.0, 2410.0, 3400.0],
    [660.0, 1720.0, 2410.0, 3450.0],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpusConfig {
    pub n_utterances: usize,
    pub utterance_s: f64,
    /// Rate the clean utterances are nominally recorded at.
    pub native_rate: u32,
    pub n_noise: usize,
    pub n_wind: usize,
    pub n_rir: usize,
    pub noise_s: f64,
}

impl SynthCorpusConfig {
    /// Thirty minutes of clean speech-like audio.
    pub fn desk() -> Self {
        Self { n_utterances: 900, utterance_s: 2.0, native_rate: 48000, n_noise: 8, n_wind: 2, n_rir: 6, noise_s: 3.0 }
    }

    pub fn total_duration_s(&self) -> f64 {
        self.n_utterances as f64 * self.utterance_s
    }
}

fn gauss(r: &mut rng::Rng) -> f64 {
    Distribution::<f64>::sample(&StandardNormal, r)
}

/// Two-pole resonator with unit gain near its centre frequency.
struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bandwidth: f64, rate: f64) -> Self {
        let r = (-PI * bandwidth / rate).exp();
        let theta = 2.0 * PI * freq.min(0.45 * rate) / rate;
        Self { a1: 2.0 * r * theta.cos(), a2: -r * r, gain: 1.0 - r, y1: 0.0, y2: 0.0 }
    }

    fn tune(&mut self, freq: f64, bandwidth: f64, rate: f64) {
        let next = Self::new(freq, bandwidth, rate);
        self.a1 = next.a1;
        self.a2 = next.a2;
        self.gain = next.gain;
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn one_pole(x: &mut [f64], cutoff: f64, rate: f64) {
    let a = (-2.0 * PI * cutoff / rate).exp();
    let mut y = 0.0;
    for v in x.iter_mut() {
        y = (1.0 - a) * *v + a * y;
        *v = y;
    }
}

fn normalize_peak(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m > 0.0 {
        x.iter_mut().for_each(|v| *v *= peak / m);
    }
}

/// Raised-cosine fade in and out of `ramp` samples.
fn envelope(i: usize, len: usize, ramp: usize) -> f64 {
    let ramp = ramp.min(len / 2).max(1);
    let edge = i.min(len - 1 - i);
    if edge >= ramp {
        1.0
    } else {
        0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos()
    }
}

enum Segment {
    Voiced { f0: (f64, f64), from: usize, to: usize },
    Fricative { centre: f64, bandwidth: f64 },
    Pause,
}

/// Speech-like utterance `index` of the corpus `seed`: voiced syllables (glottal pulse
/// train through gliding formant resonators), fricative noise bursts and pauses.
pub fn speech(seed: u64, index: u64, duration_s: f64, rate: u32) -> Result<Waveform> {
    if rate == 0 {
        return Err(Error::InvalidRate(rate));
    }
    let fs = rate as f64;
    let total = (duration_s * fs).round() as usize;
    let mut r = rng::indexed(seed, "synth.speech", index);
    let speaker_f0 = r.gen_range(90.0..220.0);
    let formant_scale = r.gen_range(0.9..1.2);
    let level = r.gen_range(0.2..0.7);
    let mut out = Vec::with_capacity(total);
    let mut vowel = r.gen_range(0..VOWELS.len());
    let mut phase = 0.0;
    let mut bank: Vec<Resonator> = VOWELS[vowel].iter().map(|&f| Resonator::new(f, 80.0, fs)).collect();
    while out.len() < total {
        let len = ((r.gen_range(0.06..0.25) * fs) as usize).min(total - out.len()).max(1);
        let roll: f64 = r.gen();
        let seg = if roll < 0.65 {
            let next = r.gen_range(0..VOWELS.len());
            let start = speaker_f0 * r.gen_range(0.85..1.15);
            let seg = Segment::Voiced { f0: (start, start * r.gen_range(0.8..1.25)), from: vowel, to: next };
            vowel = next;
            seg
        } else if roll < 0.85 {
            let centre = r.gen_range(2500.0..7000.0f64).min(0.4 * fs);
            Segment::Fricative { centre, bandwidth: r.gen_range(800.0..2500.0) }
        } else {
            Segment::Pause
        };
        let gain = r.gen_range(0.5..1.0);
        let ramp = (0.01 * fs) as usize;
        match seg {
            Segment::Voiced { f0, from, to } => {
                let mut tilt = 0.0;
                for i in 0..len {
                    let t = i as f64 / len as f64;
                    let pitch = f0.0 + (f0.1 - f0.0) * t;
                    phase += pitch / fs;
                    let pulse = if phase >= 1.0 {
                        phase -= 1.0;
                        1.0
                    } else {
                        0.0
                    };
                    tilt = 0.3 * pulse + 0.7 * tilt;
                    if i % 32 == 0 {
                        for (k, res) in bank.iter_mut().enumerate() {
                            let f = VOWELS[from][k] + (VOWELS[to][k] - VOWELS[from][k]) * t;
                            res.tune(f * formant_scale, 60.0 + 40.0 * k as f64, fs);
                        }
                    }
                    let excitation = tilt + 0.02 * gauss(&mut r);
                    let y: f64 = bank.iter_mut().enumerate().map(|(k, res)| res.step(excitation) / (k + 1) as f64).sum();
                    out.push(gain * y * envelope(i, len, ramp));
                }
            }
            Segment::Fricative { centre, bandwidth } => {
                let mut res = Resonator::new(centre, bandwidth, fs);
                for i in 0..len {
                    let y = res.step(gauss(&mut r));
                    out.push(0.3 * gain * y * envelope(i, len, ramp));
                }
            }
            Segment::Pause => out.extend(std::iter::repeat(0.0).take(len)),
        }
    }
    normalize_peak(&mut out, level);
    Waveform::new(out, rate)
}

/// Stationary background noise `index`: white, pink, brown, hum or babble.
pub fn noise(seed: u64, index: u64, duration_s: f64, rate: u32) -> Result<Waveform> {
    let fs = rate as f64;
    let n = (duration_s * fs).round() as usize;
    let mut r = rng::indexed(seed, "synth.noise", index);
    let mut x: Vec<f64> = match index % 5 {
        0 => (0..n).map(|_| gauss(&mut r)).collect(),
        1 => {
            // Sum of one-pole octaves approximates a 1/f spectrum.
            let mut acc = vec![0.0; n];
            for oct in 0..6 {
                let mut band: Vec<f64> = (0..n).map(|_| gauss(&mut r)).collect();
                one_pole(&mut band, 8000.0f64.min(0.45 * fs) / 2f64.powi(oct), fs);
                acc.iter_mut().zip(&band).for_each(|(a, b)| *a += b);
            }
            acc
        }
        2 => {
            let mut y = 0.0;
            (0..n)
                .map(|_| {
                    y = 0.995 * y + 0.1 * gauss(&mut r);
                    y
                })
                .collect()
        }
        3 => {
            let mains = if r.gen_bool(0.5) { 50.0 } else { 60.0 };
            (0..n)
                .map(|i| {
                    let t = i as f64 / fs;
                    (1..=5).map(|h| (2.0 * PI * mains * h as f64 * t).sin() / h as f64).sum::<f64>()
                        + 0.05 * gauss(&mut r)
                })
                .collect()
        }
        _ => {
            let mut acc = vec![0.0; n];
            for talker in 0..4 {
                let s = speech(seed ^ 0x6261_6262_6c65, index * 8 + talker, duration_s, rate)?;
                acc.iter_mut().zip(s.samples()).for_each(|(a, b)| *a += b);
            }
            acc
        }
    };
    normalize_peak(&mut x, 0.5);
    Waveform::new(x, rate)
}

/// Low-frequency rumble with a slowly varying gust envelope.
pub fn wind(seed: u64, index: u64, duration_s: f64, rate: u32) -> Result<Waveform> {
    let fs = rate as f64;
    let n = (duration_s * fs).round() as usize;
    let mut r = rng::indexed(seed, "synth.wind", index);
    let mut x: Vec<f64> = (0..n).map(|_| gauss(&mut r)).collect();
    one_pole(&mut x, r.gen_range(80.0..300.0), fs);
    one_pole(&mut x, r.gen_range(150.0..500.0), fs);
    let gust_hz = r.gen_range(0.3..1.5);
    let gust_phase = r.gen_range(0.0..2.0 * PI);
    x.iter_mut().enumerate().for_each(|(i, v)| {
        let t = i as f64 / fs;
        *v *= 0.6 + 0.4 * (2.0 * PI * gust_hz * t + gust_phase).sin();
    });
    normalize_peak(&mut x, 0.5);
    Waveform::new(x, rate)
}

/// Room impulse response: unit direct path followed by an exponentially decaying
/// noise tail with a random reverberation time.
pub fn rir(seed: u64, index: u64, rate: u32) -> Result<Waveform> {
    let fs = rate as f64;
    let mut r = rng::indexed(seed, "synth.rir", index);
    let rt60: f64 = r.gen_range(0.15..0.8);
    let len = (rt60.min(0.5) * fs) as usize;
    let predelay = (r.gen_range(0.001..0.005) * fs) as usize;
    let mut h = vec![0.0; len.max(predelay + 2)];
    h[0] = 1.0;
    let decay = 6.9 / (rt60 * fs);
    for (i, v) in h.iter_mut().enumerate().skip(predelay) {
        *v = 0.3 * gauss(&mut r) * (-decay * (i - predelay) as f64).exp();
    }
    one_pole(&mut h[1..], 0.4 * fs, fs);
    Waveform::new(h, rate)
}

/// Noise, wind and RIR banks rendered at `rate`.
pub fn banks(cfg: &SynthCorpusConfig, seed: u64, rate: u32, codec: CodecBackend) -> Result<Banks> {
    Ok(Banks {
        noise: (0..cfg.n_noise as u64).map(|i| noise(seed, i, cfg.noise_s, rate)).collect::<Result<_>>()?,
        wind: (0..cfg.n_wind as u64).map(|i| wind(seed, i, cfg.noise_s, rate)).collect::<Result<_>>()?,
        rir: (0..cfg.n_rir as u64).map(|i| rir(seed, i, rate)).collect::<Result<_>>()?,
        codec,
    })
}

/// Renders the corpus to `dir` as WAV files plus `manifest.jsonl`; returns the manifest.
pub fn write_corpus(dir: impl AsRef<Path>, cfg: &SynthCorpusConfig, seed: u64) -> Result<CorpusManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rate = cfg.native_rate;
    let mut entries = Vec::new();
    let mut put = |name: String, role: Role, wave: Waveform| -> Result<()> {
        write_wav(dir.join(&name), &wave, WavEncoding::Float32)?;
        entries.push(ManifestEntry { path: name.into(), role, rate, duration_s: wave.duration_s() });
        Ok(())
    };
    for i in 0..cfg.n_utterances as u64 {
        put(format!("clean_{i:05}.wav"), Role::Clean, speech(seed, i, cfg.utterance_s, rate)?)?;
    }
    for i in 0..cfg.n_noise as u64 {
        put(format!("noise_{i:03}.wav"), Role::Noise, noise(seed, i, cfg.noise_s, rate)?)?;
    }
    for i in 0..cfg.n_wind as u64 {
        put(format!("wind_{i:03}.wav"), Role::Wind, wind(seed, i, cfg.noise_s, rate)?)?;
    }
    for i in 0..cfg.n_rir as u64 {
        put(format!("rir_{i:03}.wav"), Role::Rir, rir(seed, i, rate)?)?;
    }
    let manifest = CorpusManifest { entries };
    manifest.save(dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

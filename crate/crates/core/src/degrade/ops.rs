use std::path::{Path, PathBuf};
use std::process::Command;

use rand::Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::recipe::CodecFormat;
use crate::dsp::{apply_fir, resample, LowpassSpec, Waveform};
use crate::dsp::wav::{read_wav, write_wav, WavEncoding};
use crate::error::{Error, Result};
use crate::pld::{packet_samples, PacketLossMask};

/// Stopband attenuation of the bandwidth-limit filter.
pub const BANDWIDTH_STOPBAND_DB: f64 = 60.0;
/// Environment variable that overrides the external codec binary.
pub const CODEC_TOOL_ENV: &str = "UNIPASE_CODEC_TOOL";
pub const DEFAULT_CODEC_TOOL: &str = "ffmpeg";

fn check_pair(a: &Waveform, b: &Waveform) -> Result<()> {
    if a.rate() != b.rate() {
        return Err(Error::RateMismatch { left: a.rate(), right: b.rate() });
    }
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    Ok(())
}

/// Gain applied to `noise` so that `clean + gain * noise` has the requested SNR.
pub fn noise_gain(clean: &Waveform, noise: &Waveform, snr_db: f64) -> Result<f64> {
    check_pair(clean, noise)?;
    let ps = clean.power();
    let pn = noise.power();
    if ps <= 0.0 {
        return Err(Error::ZeroPower("clean signal"));
    }
    if pn <= 0.0 {
        return Err(Error::ZeroPower("noise"));
    }
    Ok((ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt())
}

pub fn scale_noise_to_snr(clean: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Waveform> {
    let g = noise_gain(clean, noise, snr_db)?;
    let samples = clean.samples().iter().zip(noise.samples()).map(|(s, n)| s + g * n).collect();
    Waveform::new(samples, clean.rate())
}

/// Linear convolution of `x` and `h`, truncated to the first `out_len` samples.
pub fn convolve(x: &[f64], h: &[f64], out_len: usize) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; out_len];
    }
    if h.len().min(x.len()) <= 64 {
        let mut y = vec![0.0; out_len];
        for (n, yn) in y.iter_mut().enumerate() {
            let lo = n.saturating_sub(x.len() - 1);
            let hi = n.min(h.len() - 1);
            for k in lo..=hi {
                *yn += h[k] * x[n - k];
            }
        }
        return y;
    }
    let full = x.len() + h.len() - 1;
    let n = full.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let lift = |v: &[f64]| {
        let mut buf: Vec<Complex64> = v.iter().map(|&s| Complex64::new(s, 0.0)).collect();
        buf.resize(n, Complex64::new(0.0, 0.0));
        buf
    };
    let mut a = lift(x);
    let mut b = lift(h);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    let scale = 1.0 / n as f64;
    (0..out_len).map(|i| if i < full { a[i].re * scale } else { 0.0 }).collect()
}

pub fn apply_reverb(clean: &Waveform, rir: &Waveform) -> Result<Waveform> {
    if rir.is_empty() {
        return Err(Error::EmptyKernel);
    }
    if clean.rate() != rir.rate() {
        return Err(Error::RateMismatch { left: clean.rate(), right: rir.rate() });
    }
    Waveform::new(convolve(clean.samples(), rir.samples(), clean.len()), clean.rate())
}

/// Linear-interpolated quantile of `sorted` (ascending) at `q` in [0, 1].
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn apply_clipping(wave: &Waveform, min_quantile: f64, max_quantile: f64) -> Result<Waveform> {
    if !(0.0..=1.0).contains(&min_quantile) || !(0.0..=1.0).contains(&max_quantile) || min_quantile > max_quantile {
        return Err(Error::InvalidArgument(format!(
            "clipping quantiles must satisfy 0 <= min <= max <= 1, got {min_quantile}, {max_quantile}"
        )));
    }
    let mut sorted = wave.samples().to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = quantile(&sorted, min_quantile);
    let hi = quantile(&sorted, max_quantile);
    wave.map(|x| x.clamp(lo, hi))
}

pub fn bandwidth_filter(limit_hz: f64) -> LowpassSpec {
    LowpassSpec { pass_hz: limit_hz, stop_hz: 1.1 * limit_hz, atten_db: BANDWIDTH_STOPBAND_DB }
}

pub fn apply_bandwidth_limit(wave: &Waveform, limit_hz: f64) -> Result<Waveform> {
    let nyquist = wave.rate() as f64 / 2.0;
    if !(limit_hz > 0.0 && limit_hz < nyquist) {
        return Err(Error::InvalidArgument(format!("bandwidth limit {limit_hz} Hz must lie in (0, {nyquist})")));
    }
    let taps = bandwidth_filter(limit_hz).design(wave.rate() as f64);
    Waveform::new(apply_fir(wave.samples(), &taps), wave.rate())
}

/// Bit depth of the built-in codec surrogate: qscale -1 maps to 10 bits, qscale 10 to 4 bits.
pub fn surrogate_bits(qscale: f64) -> f64 {
    10.0 - (qscale + 1.0) * 6.0 / 11.0
}

/// Nominal lowpass of each format used by the surrogate, before the Nyquist cap.
pub fn surrogate_cutoff_hz(format: CodecFormat) -> f64 {
    match format {
        CodecFormat::Mp3 => 11025.0,
        CodecFormat::Ogg => 13000.0,
    }
}

/// Re-quantizes to `bits` of amplitude resolution over [-1, 1]; step = 2^(1 - bits).
pub fn requantize(x: f64, bits: f64) -> f64 {
    let step = 2f64.powf(1.0 - bits);
    (x / step).round() * step
}

#[derive(Debug, Clone, PartialEq)]
pub enum CodecSpec {
    /// Amplitude re-quantization followed by an optional bandwidth limit.
    Surrogate { bits: Option<f64>, lowpass_hz: Option<f64> },
    /// Encode/decode round trip through an ffmpeg-compatible command-line tool.
    External { tool: PathBuf, format: CodecFormat, qscale: f64 },
}

/// How recipe codec entries are realized.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum CodecBackend {
    #[default]
    Surrogate,
    External(PathBuf),
}

impl CodecBackend {
    /// External tool when `UNIPASE_CODEC_TOOL` is set, surrogate otherwise.
    pub fn from_env() -> Self {
        match std::env::var_os(CODEC_TOOL_ENV) {
            Some(tool) if !tool.is_empty() => CodecBackend::External(PathBuf::from(tool)),
            _ => CodecBackend::Surrogate,
        }
    }

    pub fn spec(&self, format: CodecFormat, qscale: f64, rate: u32) -> CodecSpec {
        match self {
            CodecBackend::Surrogate => CodecSpec::Surrogate {
                bits: Some(surrogate_bits(qscale)),
                lowpass_hz: Some(surrogate_cutoff_hz(format).min(0.45 * rate as f64)),
            },
            CodecBackend::External(tool) => CodecSpec::External { tool: tool.clone(), format, qscale },
        }
    }
}

pub fn apply_codec(wave: &Waveform, spec: &CodecSpec) -> Result<Waveform> {
    match spec {
        CodecSpec::Surrogate { bits, lowpass_hz } => {
            let quantized = match bits {
                Some(b) => wave.map(|x| requantize(x, *b))?,
                None => wave.clone(),
            };
            match lowpass_hz {
                Some(hz) => apply_bandwidth_limit(&quantized, *hz),
                None => Ok(quantized),
            }
        }
        CodecSpec::External { tool, format, qscale } => external_codec(wave, tool, *format, *qscale),
    }
}

fn run_tool(tool: &Path, args: &[&std::ffi::OsStr]) -> Result<()> {
    let name = tool.display().to_string();
    let out = Command::new(tool).args(args).output().map_err(|e| Error::CodecTool {
        tool: name.clone(),
        reason: if e.kind() == std::io::ErrorKind::NotFound { "not found".into() } else { e.to_string() },
    })?;
    if !out.status.success() {
        let stderr = String::from_utf8_lossy(&out.stderr);
        let tail: String = stderr.lines().rev().take(3).collect::<Vec<_>>().join(" | ");
        return Err(Error::CodecTool { tool: name, reason: format!("exit status {}: {tail}", out.status) });
    }
    Ok(())
}

fn external_codec(wave: &Waveform, tool: &Path, format: CodecFormat, qscale: f64) -> Result<Waveform> {
    let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let input = dir.path().join("in.wav");
    let coded = dir.path().join(format!("coded.{}", format.extension()));
    let output = dir.path().join("out.wav");
    write_wav(&input, wave, WavEncoding::Float32)?;
    let codec = match format {
        CodecFormat::Mp3 => "libmp3lame",
        CodecFormat::Ogg => "libvorbis",
    };
    let q = format!("{qscale}");
    let rate = wave.rate().to_string();
    run_tool(
        tool,
        &["-y", "-loglevel", "error", "-i"]
            .iter()
            .map(std::ffi::OsStr::new)
            .chain([input.as_os_str()])
            .chain(["-c:a", codec, "-q:a", q.as_str()].iter().map(std::ffi::OsStr::new))
            .chain([coded.as_os_str()])
            .collect::<Vec<_>>(),
    )?;
    run_tool(
        tool,
        &["-y", "-loglevel", "error", "-i"]
            .iter()
            .map(std::ffi::OsStr::new)
            .chain([coded.as_os_str()])
            .chain(["-ar", rate.as_str(), "-ac", "1", "-c:a", "pcm_f32le"].iter().map(std::ffi::OsStr::new))
            .chain([output.as_os_str()])
            .collect::<Vec<_>>(),
    )?;
    let decoded = read_wav(&output)?;
    let decoded = if decoded.rate() != wave.rate() { resample(&decoded, wave.rate())? } else { decoded };
    Ok(decoded.fit_to(wave.len()))
}

/// Places `lost` lost packets among `total` so that no run exceeds `max_run`.
/// Runs have uniformly drawn lengths; the gaps between them are distributed uniformly.
pub fn sample_loss_flags<R: Rng + ?Sized>(total: usize, lost: usize, max_run: usize, rng: &mut R) -> Result<Vec<bool>> {
    if lost == 0 {
        return Ok(vec![false; total]);
    }
    if max_run == 0 || lost > total {
        return Err(Error::InvalidArgument(format!("cannot lose {lost} of {total} packets with runs of {max_run}")));
    }
    let kept = total - lost;
    // Every run needs a kept packet between it and the next one, so at most kept + 1 runs fit.
    let max_runs = kept + 1;
    let min_runs = lost.div_ceil(max_run);
    if min_runs > max_runs {
        return Err(Error::InvalidArgument(format!(
            "{lost} lost packets of {total} cannot respect a maximum run of {max_run}"
        )));
    }
    let mut runs = Vec::new();
    let mut remaining = lost;
    while remaining > 0 {
        // Leave room so the remaining budget still fits the remaining run slots.
        let slots_left = max_runs - runs.len() - 1;
        let lower = remaining.saturating_sub(slots_left * max_run).max(1);
        let upper = remaining.min(max_run);
        let len = rng.gen_range(lower..=upper);
        runs.push(len);
        remaining -= len;
    }
    let n_runs = runs.len();
    // Gaps: n_runs + 1 slots, interior ones >= 1, distributed by stars and bars.
    let free = kept - (n_runs - 1);
    let mut cuts: Vec<usize> = (0..n_runs).map(|_| rng.gen_range(0..=free)).collect();
    cuts.sort_unstable();
    let mut gaps = Vec::with_capacity(n_runs + 1);
    let mut prev = 0;
    for &c in &cuts {
        gaps.push(c - prev);
        prev = c;
    }
    gaps.push(free - prev);
    for g in gaps.iter_mut().take(n_runs).skip(1) {
        *g += 1;
    }
    let mut flags = Vec::with_capacity(total);
    for (i, &run) in runs.iter().enumerate() {
        flags.extend(std::iter::repeat(false).take(gaps[i]));
        flags.extend(std::iter::repeat(true).take(run));
    }
    flags.extend(std::iter::repeat(false).take(gaps[n_runs]));
    debug_assert_eq!(flags.len(), total);
    Ok(flags)
}

pub fn apply_packet_loss<R: Rng + ?Sized>(
    wave: &Waveform,
    rate_fraction: f64,
    duration_s: f64,
    max_continuous: usize,
    rng: &mut R,
) -> Result<(Waveform, PacketLossMask)> {
    if !(0.0..1.0).contains(&rate_fraction) {
        return Err(Error::InvalidArgument(format!("packet loss rate {rate_fraction} outside [0, 1)")));
    }
    let p = packet_samples(wave.rate(), duration_s)?;
    let n = wave.len() / p;
    if n == 0 {
        return Err(Error::SignalTooShort { len: wave.len(), needed: p });
    }
    let lost = (rate_fraction * n as f64).round() as usize;
    let flags = sample_loss_flags(n, lost, max_continuous, rng)?;
    let mut samples = wave.samples().to_vec();
    for (i, _) in flags.iter().enumerate().filter(|(_, &f)| f) {
        samples[i * p..(i + 1) * p].fill(0.0);
    }
    Ok((Waveform::new(samples, wave.rate())?, PacketLossMask { flags, packet_samples: p }))
}

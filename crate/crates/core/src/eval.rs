//! Signal-level metrics, packet-loss condition slicing and a hook for external
//! metric programs.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dsp::wav::{write_wav, WavEncoding};
use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::objectives::multiscale_mel_loss;
use crate::pld::PacketLossMask;

/// SI-SDR values are clamped to +/- this many dB.
pub const SI_SDR_CAP_DB: f64 = 60.0;

/// Loss-fraction bins in percent; each covers (lo, hi] except the first, which also
/// includes 0.
pub const FRACTION_BINS: [(f64, f64); 5] = [(0.0, 10.0), (10.0, 20.0), (20.0, 30.0), (30.0, 40.0), (40.0, 100.0)];

/// Longest-burst bins in packets, upper-inclusive like [`FRACTION_BINS`]. The last bin
/// also takes bursts beyond its nominal upper edge.
pub const BURST_BINS: [(usize, usize); 4] = [(0, 6), (6, 25), (25, 50), (50, 150)];

fn check_pair(reference: &Waveform, estimate: &Waveform) -> Result<()> {
    if reference.rate() != estimate.rate() {
        return Err(Error::RateMismatch { left: reference.rate(), right: estimate.rate() });
    }
    if reference.len() != estimate.len() {
        return Err(Error::LengthMismatch { left: reference.len(), right: estimate.len() });
    }
    Ok(())
}

/// Scale-invariant signal-to-distortion ratio in dB, clamped to +/-[`SI_SDR_CAP_DB`].
pub fn si_sdr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    check_pair(reference, estimate)?;
    let r = reference.samples();
    let e = estimate.samples();
    let rr: f64 = r.iter().map(|v| v * v).sum();
    if rr == 0.0 {
        return Err(Error::ZeroPower("reference"));
    }
    let scale = r.iter().zip(e).map(|(a, b)| a * b).sum::<f64>() / rr;
    let (mut target, mut residual) = (0.0, 0.0);
    for (a, b) in r.iter().zip(e) {
        let t = scale * a;
        target += t * t;
        residual += (b - t) * (b - t);
    }
    let db = 10.0 * (target / residual).log10();
    Ok(if db.is_nan() { -SI_SDR_CAP_DB } else { db.clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB) })
}

/// The multi-scale log-Mel L1 distance used as a training loss, reported as a metric.
pub fn log_mel_distance(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    check_pair(reference, estimate)?;
    multiscale_mel_loss(reference, estimate)
}

pub fn fraction_bin(loss_fraction: f64) -> usize {
    let pct = loss_fraction * 100.0;
    FRACTION_BINS.iter().position(|&(_, hi)| pct <= hi).unwrap_or(FRACTION_BINS.len() - 1)
}

pub fn burst_bin(longest_burst: usize) -> usize {
    BURST_BINS.iter().position(|&(_, hi)| longest_burst <= hi).unwrap_or(BURST_BINS.len() - 1)
}

pub fn fraction_label(bin: usize) -> String {
    let (lo, hi) = FRACTION_BINS[bin];
    format!("{lo}-{hi}%")
}

pub fn burst_label(bin: usize) -> String {
    let (lo, hi) = BURST_BINS[bin];
    format!("{lo}-{hi}")
}

/// How to run an external metric. `command[0]` is the program; the tokens `{ref}` and
/// `{est}` in the remaining arguments are replaced by paths to WAV files. The program
/// must print the score as the last non-empty line of its standard output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalMetric {
    pub name: String,
    pub command: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
}

fn default_timeout() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetricOutcome {
    Value(f64),
    Absent { warning: String },
}

fn run_with_timeout(mut cmd: Command, timeout: Duration) -> std::result::Result<String, String> {
    let mut child = cmd
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| format!("could not start: {e}"))?;
    let mut stdout = child.stdout.take().expect("piped stdout");
    let reader = std::thread::spawn(move || {
        let mut s = String::new();
        stdout.read_to_string(&mut s).map(|_| s)
    });
    let start = Instant::now();
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if start.elapsed() >= timeout => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(format!("timed out after {:.1} s", timeout.as_secs_f64()));
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(10)),
            Err(e) => return Err(format!("wait failed: {e}")),
        }
    };
    let out = reader.join().map_err(|_| "stdout reader panicked".to_string())?.map_err(|e| e.to_string())?;
    if !status.success() {
        return Err(format!("exited with {status}"));
    }
    Ok(out)
}

/// Runs an external metric on one pair. Failures never propagate: they come back as
/// [`MetricOutcome::Absent`] with a reason.
pub fn external_metric(spec: &ExternalMetric, reference: &Waveform, estimate: &Waveform) -> MetricOutcome {
    let absent = |why: String| MetricOutcome::Absent { warning: format!("{}: {why}", spec.name) };
    let Some((program, args)) = spec.command.split_first() else {
        return absent("empty command".into());
    };
    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return absent(format!("no temp dir: {e}")),
    };
    let ref_path = dir.path().join("ref.wav");
    let est_path = dir.path().join("est.wav");
    for (p, w) in [(&ref_path, reference), (&est_path, estimate)] {
        if let Err(e) = write_wav(p, w, WavEncoding::Float32) {
            return absent(e.to_string());
        }
    }
    let mut cmd = Command::new(program);
    for a in args {
        cmd.arg(a.replace("{ref}", &ref_path.to_string_lossy()).replace("{est}", &est_path.to_string_lossy()));
    }
    match run_with_timeout(cmd, Duration::from_secs_f64(spec.timeout_s.max(0.0))) {
        Ok(out) => match out.lines().rev().find(|l| !l.trim().is_empty()).map(|l| l.trim().parse::<f64>()) {
            Some(Ok(v)) if v.is_finite() => MetricOutcome::Value(v),
            Some(_) => absent(format!("unparsable output {:?}", out.trim())),
            None => absent("no output".into()),
        },
        Err(why) => absent(why),
    }
}

/// Per-utterance metrics and packet-loss condition tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceReport {
    pub id: String,
    pub rate: u32,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub longest_burst: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction_bin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burst_bin: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Built-in metrics always; external metrics when they succeed.
pub fn evaluate_pair(
    id: &str,
    reference: &Waveform,
    estimate: &Waveform,
    mask: Option<&PacketLossMask>,
    external: &[ExternalMetric],
) -> Result<UtteranceReport> {
    let mut metrics = BTreeMap::new();
    metrics.insert("si_sdr".to_string(), si_sdr(reference, estimate)?);
    metrics.insert("log_mel_distance".to_string(), log_mel_distance(reference, estimate)?);
    let mut warnings = Vec::new();
    for m in external {
        match external_metric(m, reference, estimate) {
            MetricOutcome::Value(v) => {
                metrics.insert(m.name.clone(), v);
            }
            MetricOutcome::Absent { warning } => {
                log::warn!("{id}: {warning}");
                warnings.push(warning);
            }
        }
    }
    Ok(UtteranceReport {
        id: id.to_string(),
        rate: reference.rate(),
        metrics,
        loss_fraction: mask.map(|m| m.loss_fraction()),
        longest_burst: mask.map(|m| m.longest_burst()),
        fraction_bin: mask.map(|m| fraction_label(fraction_bin(m.loss_fraction()))),
        burst_bin: mask.map(|m| burst_label(burst_bin(m.longest_burst()))),
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub label: String,
    pub count: usize,
    pub means: BTreeMap<String, f64>,
}

/// Metric means per loss-fraction bin, per burst bin and per (fraction, burst) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlcTable {
    pub by_fraction: Vec<BinSummary>,
    pub by_burst: Vec<BinSummary>,
    pub grid: Vec<BinSummary>,
}

fn summarize(label: String, members: &[&UtteranceReport]) -> BinSummary {
    let mut values: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in members {
        for (k, v) in &r.metrics {
            values.entry(k).or_default().push(*v);
        }
    }
    let means = values
        .into_iter()
        .map(|(k, mut vs)| {
            // Sorting first makes the mean independent of utterance order.
            vs.sort_by(f64::total_cmp);
            (k.to_string(), vs.iter().sum::<f64>() / vs.len() as f64)
        })
        .collect();
    BinSummary { label, count: members.len(), means }
}

/// Groups reports by the loss fraction and longest burst of their masks.
pub fn slice_by_plc_condition(reports: &[UtteranceReport], masks: &[PacketLossMask]) -> Result<PlcTable> {
    if reports.len() != masks.len() {
        return Err(Error::LengthMismatch { left: reports.len(), right: masks.len() });
    }
    let tags: Vec<(usize, usize)> =
        masks.iter().map(|m| (fraction_bin(m.loss_fraction()), burst_bin(m.longest_burst()))).collect();
    let pick = |f: &dyn Fn(&(usize, usize)) -> bool| -> Vec<&UtteranceReport> {
        reports.iter().zip(&tags).filter(|(_, t)| f(t)).map(|(r, _)| r).collect()
    };
    let by_fraction = (0..FRACTION_BINS.len()).map(|b| summarize(fraction_label(b), &pick(&|t| t.0 == b))).collect();
    let by_burst = (0..BURST_BINS.len()).map(|b| summarize(burst_label(b), &pick(&|t| t.1 == b))).collect();
    let mut grid = Vec::new();
    for fb in 0..FRACTION_BINS.len() {
        for bb in 0..BURST_BINS.len() {
            let label = format!("{} x {}", fraction_label(fb), burst_label(bb));
            grid.push(summarize(label, &pick(&|t| *t == (fb, bb))));
        }
    }
    Ok(PlcTable { by_fraction, by_burst, grid })
}

/// Overall means across all reports.
pub fn overall(reports: &[UtteranceReport]) -> BinSummary {
    summarize("all".into(), &reports.iter().collect::<Vec<_>>())
}

/// Aligned plain-text table: one row per summary, one column per metric.
pub fn format_table(rows: &[BinSummary]) -> String {
    let metrics: Vec<&String> = {
        let mut m: Vec<&String> = rows.iter().flat_map(|r| r.means.keys()).collect();
        m.sort();
        m.dedup();
        m
    };
    let label_w = rows.iter().map(|r| r.label.len()).max().unwrap_or(3).max(3);
    let mut out = format!("{:<label_w$}  {:>5}", "bin", "n");
    for m in &metrics {
        out.push_str(&format!("  {:>16}", m));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{:<label_w$}  {:>5}", r.label, r.count));
        for m in &metrics {
            match r.means.get(*m) {
                Some(v) => out.push_str(&format!("  {:>16.4}", v)),
                None => out.push_str(&format!("  {:>16}", "-")),
            }
        }
        out.push('\n');
    }
    out
}

/// Reads external metric definitions from a TOML file with `[[metric]]` tables.
pub fn load_metrics(path: impl Into<PathBuf>) -> Result<Vec<ExternalMetric>> {
    #[derive(Deserialize)]
    struct File {
        #[serde(default)]
        metric: Vec<ExternalMetric>,
    }
    let path = path.into();
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let f: File = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(f.metric)
}

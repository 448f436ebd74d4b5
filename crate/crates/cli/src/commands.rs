use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use unipase_core::degrade::{degrade, sample_recipe, CorpusManifest, DegradationRecipe};
use unipase_core::dsp::wav::{read_wav, write_wav, WavEncoding};
use unipase_core::dsp::{resample, stft, WindowKind};
use unipase_core::eval::{self, UtteranceReport};
use unipase_core::pipeline::{run_stage, Corpus, Enhancer, RunConfig, StageKind};
use unipase_core::pld::{detect, mask_run_lengths};
use unipase_core::synth::{write_corpus, SynthCorpusConfig};
use unipase_core::{rng, Error, PacketLossMask, PldConfig, Result, Waveform};

/// Spectrogram rendering: FFT size, hop and displayed dynamic range.
const SPEC_FFT: usize = 512;
const SPEC_HOP: usize = 128;
const SPEC_RANGE_DB: f64 = 80.0;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    for item in items {
        writeln!(f, "{}", serde_json::to_string(item)?).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SimRecord<'a> {
    id: String,
    noisy: String,
    clean: String,
    recipe: &'a DegradationRecipe,
    #[serde(skip_serializing_if = "Option::is_none")]
    loss_mask: Option<String>,
}

/// Pair `i` degrades clean utterance `i mod n` with a recipe drawn from its own stream.
pub fn simulate(manifest: &Path, out: &Path, seed: u64, count: usize, rate: u32) -> Result<()> {
    let manifest = CorpusManifest::load(manifest)?;
    create_dir(out)?;
    if count == 0 {
        return Ok(());
    }
    let data = Corpus::from_manifest(manifest).at_rate(rate)?;
    let pairs = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::indexed(seed, "simulate", i as u64);
            let clean = data.utterance(i % data.len())?;
            let recipe = sample_recipe(&mut r, data.banks().sizes());
            degrade(&clean, data.banks(), &recipe)
        })
        .collect::<Result<Vec<_>>>()?;
    let (noisy_dir, clean_dir) = (out.join("noisy"), out.join("clean"));
    create_dir(&noisy_dir)?;
    create_dir(&clean_dir)?;
    let mut records = Vec::with_capacity(count);
    for (i, pair) in pairs.iter().enumerate() {
        let name = format!("{i:05}.wav");
        write_wav(noisy_dir.join(&name), &pair.noisy, WavEncoding::Float32)?;
        write_wav(clean_dir.join(&name), &pair.target, WavEncoding::Float32)?;
        records.push(SimRecord {
            id: format!("{i:05}"),
            noisy: format!("noisy/{name}"),
            clean: format!("clean/{name}"),
            recipe: &pair.recipe,
            loss_mask: pair.loss_mask.as_ref().map(PacketLossMask::to_bit_string),
        });
    }
    write_lines(&out.join("recipes.jsonl"), &records)?;
    log::info!("wrote {count} pairs to {}", out.display());
    Ok(())
}

pub fn train(config: Option<&Path>, dir: &Path, stage: Option<StageKind>, seed: Option<u64>) -> Result<()> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::desk(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    create_dir(dir)?;
    let corpus = Corpus::from_config(&cfg.corpus, cfg.seed)?;
    let stages = match stage {
        Some(k) => vec![k],
        None => StageKind::ALL.to_vec(),
    };
    for kind in stages {
        let report = run_stage(&cfg, kind, &corpus, dir)?;
        match report.trend(100.min(report.log.len().max(1))) {
            Some((first, last)) => println!(
                "{kind}: {} steps, {} {first:.5} -> {last:.5}, checkpoint {}",
                report.log.len(),
                report.tracked,
                report.checkpoint.display()
            ),
            None => println!("{kind}: checkpoint {}", report.checkpoint.display()),
        }
    }
    Ok(())
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

pub fn enhance(input: &Path, out: &Path, checkpoint_dir: &Path) -> Result<()> {
    let jobs: Vec<(PathBuf, PathBuf)> = if input.is_dir() {
        create_dir(out)?;
        wav_files(input)?.into_iter().map(|p| (out.join(p.file_name().expect("file name")), p)).collect()
    } else {
        let target = if out.is_dir() { out.join(input.file_name().unwrap_or_default()) } else { out.to_path_buf() };
        if let Some(parent) = target.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        vec![(target, input.to_path_buf())]
    };
    // Read inputs before loading models so unreadable audio reports as a data error.
    let waves = jobs.iter().map(|(_, src)| read_wav(src)).collect::<Result<Vec<_>>>()?;
    let enhancer = Enhancer::load(checkpoint_dir)?;
    for ((dst, src), wave) in jobs.iter().zip(&waves) {
        let y = enhancer.enhance(wave)?;
        write_wav(dst, &y, WavEncoding::Float32)?;
        log::info!("{} -> {} ({} Hz)", src.display(), dst.display(), y.rate());
    }
    Ok(())
}

fn to_rate(w: Waveform, rate: u32) -> Result<Waveform> {
    if w.rate() == rate {
        Ok(w)
    } else {
        resample(&w, rate)
    }
}

/// Estimates at another rate are resampled to the reference rate; lengths are matched
/// by trimming or zero-padding the estimate.
pub fn evaluate(reference: &Path, estimate: &Path, noisy: Option<&Path>, metrics: Option<&Path>, out: &Path) -> Result<()> {
    let external = match metrics {
        Some(p) => eval::load_metrics(p)?,
        None => Vec::new(),
    };
    let refs = wav_files(reference)?;
    if refs.is_empty() {
        return Err(Error::Config(format!("no WAV files in {}", reference.display())));
    }
    let pld = PldConfig::default();
    let results = refs
        .par_iter()
        .map(|rp| -> Result<(UtteranceReport, Option<PacketLossMask>)> {
            let name = rp.file_name().expect("file name");
            let id = Path::new(name).file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let r = read_wav(rp)?;
            let e = to_rate(read_wav(estimate.join(name))?, r.rate())?.fit_to(r.len());
            let mask = match noisy {
                Some(dir) => Some(detect(&read_wav(dir.join(name))?, &pld)?),
                None => None,
            };
            Ok((eval::evaluate_pair(&id, &r, &e, mask.as_ref(), &external)?, mask))
        })
        .collect::<Result<Vec<_>>>()?;
    let (reports, masks): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    create_dir(out)?;
    write_lines(&out.join("report.jsonl"), &reports)?;

    let overall = eval::overall(&reports);
    let mut text = eval::format_table(std::slice::from_ref(&overall));
    let table = match masks.into_iter().collect::<Option<Vec<_>>>() {
        Some(masks) => {
            let t = eval::slice_by_plc_condition(&reports, &masks)?;
            text.push_str("\nby loss fraction\n");
            text.push_str(&eval::format_table(&t.by_fraction));
            text.push_str("\nby longest burst (packets)\n");
            text.push_str(&eval::format_table(&t.by_burst));
            Some(t)
        }
        None => None,
    };
    let warnings: usize = reports.iter().map(|r| r.warnings.len()).sum();
    if warnings > 0 {
        text.push_str(&format!("\n{warnings} external metric values absent; see report.jsonl\n"));
    }
    fs::write(out.join("summary.txt"), &text).map_err(|e| Error::Io { path: out.join("summary.txt"), source: e })?;
    let json = serde_json::json!({ "overall": overall, "plc": table });
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&json)?)
        .map_err(|e| Error::Io { path: out.join("summary.json"), source: e })?;
    print!("{text}");
    Ok(())
}

pub fn inspect_pld(audio: &Path) -> Result<()> {
    let wave = read_wav(audio)?;
    let mask = detect(&wave, &PldConfig::default())?;
    let runs = mask_run_lengths(&mask);
    println!("packets {}", mask.len());
    println!("lost {}", mask.lost_count());
    println!("loss_fraction {:.6}", mask.loss_fraction());
    println!("longest_burst {}", mask.longest_burst());
    println!("runs {}", runs.len());
    println!("mask {}", mask.to_bit_string());
    for (start, len) in runs {
        println!("run {start} {len}");
    }
    Ok(())
}

/// Log-magnitude image, one column per frame and one row per bin, low frequencies at
/// the bottom.
pub fn spectrogram_image(wave: &Waveform) -> Result<image::GrayImage> {
    let spec = stft(wave, SPEC_FFT, SPEC_HOP, WindowKind::Hann)?;
    let mag = spec.magnitude();
    let db: Vec<Vec<f64>> = mag.iter().map(|row| row.iter().map(|m| 20.0 * (m + 1e-10).log10()).collect()).collect();
    let top = db.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (n_freq, n_frames) = (spec.n_freq(), spec.n_frames());
    Ok(image::GrayImage::from_fn(n_frames as u32, n_freq as u32, |x, y| {
        let v = db[n_freq - 1 - y as usize][x as usize];
        let level = ((v - top + SPEC_RANGE_DB) / SPEC_RANGE_DB).clamp(0.0, 1.0);
        image::Luma([(level * 255.0).round() as u8])
    }))
}

pub fn inspect_spectrogram(audio: &Path, out: &Path) -> Result<()> {
    let wave = read_wav(audio)?;
    let img = spectrogram_image(&wave)?;
    img.save_with_format(out, image::ImageFormat::Png)
        .map_err(|e| Error::Io { path: out.to_path_buf(), source: std::io::Error::other(e) })?;
    println!("{} x {} (frames x bins) -> {}", img.width(), img.height(), out.display());
    Ok(())
}

pub fn synth_corpus(out: &Path, seed: u64, count: Option<usize>) -> Result<()> {
    let mut cfg = SynthCorpusConfig::desk();
    if let Some(n) = count {
        cfg.n_utterances = n;
    }
    let manifest = write_corpus(out, &cfg, seed)?;
    println!("{} files, manifest {}", manifest.entries.len(), out.join("manifest.jsonl").display());
    Ok(())
}

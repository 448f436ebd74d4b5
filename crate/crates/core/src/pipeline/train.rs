use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{Device, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, StageConfig, StageKind};
use super::data::{Corpus, StageData};
use super::enhance::Cascade;
use super::models::{
    build_adapter, build_encoder, build_postnet, build_vocoder, load_encoder, save_stage, AdapterSpec, BackboneSpec,
    Owned, VocoderSpec, TRAIN_DTYPE,
};
use super::schedule::{lr_at, ScheduleConfig};
use crate::backbone::{distill_loss, Encoder, ENCODER_RATE};
use crate::checkpoint;
use crate::degrade::{degrade, sample_recipe};
use crate::dsp::{resample, Waveform};
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, scalar, ParamStore};
use crate::objectives::{
    feature_match_tensor, lsgan_d_tensor, lsgan_g_tensor, mse, DiscOutput, LossWeights, Msrd, MultiscaleMel,
    WaveDiscriminators,
};
use crate::pld::{detect, PldConfig};
use crate::postnet::POSTNET_RATE;
use crate::rng;

/// One line of a stage's training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub losses: BTreeMap<String, f64>,
    pub lr: f64,
    pub wall_ms: u64,
}

/// Parameter hash of a module that must not change during a stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrozenCheck {
    pub module: String,
    pub before: String,
    pub after: String,
}

#[derive(Debug, Clone)]
pub struct StageReport {
    pub stage: StageKind,
    pub checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub log: Vec<LogRecord>,
    /// Loss component whose trend measures progress.
    pub tracked: &'static str,
    pub frozen: Vec<FrozenCheck>,
}

/// Trailing means: entry `i` averages `xs[i + 1 - window..=i]`, starting at `window - 1`.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || xs.len() < window {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(xs.len() + 1 - window);
    let mut sum: f64 = xs[..window].iter().sum();
    out.push(sum / window as f64);
    for i in window..xs.len() {
        sum += xs[i] - xs[i - window];
        out.push(sum / window as f64);
    }
    out
}

impl StageReport {
    pub fn series(&self, key: &str) -> Vec<f64> {
        self.log.iter().filter_map(|r| r.losses.get(key).copied()).collect()
    }

    /// (moving average at the end of the first window, moving average at the end of the run).
    pub fn trend(&self, window: usize) -> Option<(f64, f64)> {
        let ma = moving_average(&self.series(self.tracked), window);
        Some((*ma.first()?, *ma.last()?))
    }
}

struct Opt {
    adamw: AdamW,
    vars: Vec<Var>,
    clip: Option<f64>,
}

impl Opt {
    fn new(vars: Vec<Var>, sched: &ScheduleConfig, clip: Option<f64>) -> Result<Self> {
        let params = ParamsAdamW {
            lr: 0.0,
            beta1: sched.beta1,
            beta2: sched.beta2,
            eps: sched.eps,
            weight_decay: sched.weight_decay,
        };
        Ok(Self { adamw: AdamW::new(vars.clone(), params)?, vars, clip })
    }

    fn step(&mut self, loss: &Tensor, lr: f64) -> Result<()> {
        let mut grads = loss.backward()?;
        if let Some(c) = self.clip {
            clip_grad_norm(&mut grads, &self.vars, c)?;
        }
        self.adamw.set_learning_rate(lr);
        self.adamw.step(&grads)?;
        Ok(())
    }
}

struct Logger {
    out: BufWriter<File>,
    records: Vec<LogRecord>,
    start: Instant,
}

impl Logger {
    fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { out: BufWriter::new(file), records: Vec::new(), start: Instant::now() })
    }

    fn push(&mut self, step: usize, lr: f64, losses: BTreeMap<String, f64>, every: usize) -> Result<()> {
        if losses.values().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step, losses: format!("{losses:?}") });
        }
        let rec = LogRecord { step, losses, lr, wall_ms: self.start.elapsed().as_millis() as u64 };
        serde_json::to_writer(&mut self.out, &rec)?;
        self.out.write_all(b"\n").map_err(|e| Error::io("<log>", e))?;
        if every > 0 && (step + 1) % every == 0 {
            log::info!("step {} lr {:.2e} {:?}", step + 1, lr, rec.losses);
        }
        self.records.push(rec);
        Ok(())
    }

    fn finish(mut self) -> Result<Vec<LogRecord>> {
        self.out.flush().map_err(|e| Error::io("<log>", e))?;
        Ok(self.records)
    }
}

fn stack(waves: &[Waveform]) -> Result<Tensor> {
    let len = waves.first().map_or(0, |w| w.len());
    let flat: Vec<f32> = waves.iter().flat_map(|w| w.to_f32()).collect();
    Ok(Tensor::from_vec(flat, (waves.len(), len), &Device::Cpu)?.to_dtype(TRAIN_DTYPE)?)
}

fn masks(waves: &[Waveform], pld: &PldConfig) -> Result<Tensor> {
    let flags = waves.iter().map(|w| detect(w, pld)).collect::<Result<Vec<_>>>()?;
    let frames = flags.first().map_or(0, |m| m.len());
    let flat: Vec<f32> = flags.iter().flat_map(|m| m.as_f32()).collect();
    Ok(Tensor::from_vec(flat, (waves.len(), frames), &Device::Cpu)?.to_dtype(TRAIN_DTYPE)?)
}

fn frozen(stores: &[(&str, &ParamStore)]) -> Result<Vec<(String, String)>> {
    stores.iter().map(|(n, s)| Ok((n.to_string(), s.hash()?))).collect()
}

fn verify_frozen(before: Vec<(String, String)>, stores: &[(&str, &ParamStore)]) -> Result<Vec<FrozenCheck>> {
    let after = frozen(stores)?;
    let checks: Vec<FrozenCheck> = before
        .into_iter()
        .zip(after)
        .map(|((module, before), (_, after))| FrozenCheck { module, before, after })
        .collect();
    if let Some(c) = checks.iter().find(|c| c.before != c.after) {
        return Err(Error::Config(format!("frozen module `{}` changed during training", c.module)));
    }
    Ok(checks)
}

/// Adversarial terms shared by the GAN stages: returns (adv, feat) for the generator.
fn generator_adv(real: &DiscOutput, fake: &DiscOutput) -> Result<(Tensor, Tensor)> {
    Ok((lsgan_g_tensor(&fake.scores)?, feature_match_tensor(&real.features, &fake.features)?))
}

fn stage_seed(cfg: &RunConfig, kind: StageKind, what: &str) -> u64 {
    rng::derive_seed(cfg.seed, &format!("{}.{what}", kind.as_str()), 0)
}

/// Trains one stage and writes `<stage>.safetensors` and `<stage>.log.jsonl` to `dir`.
pub fn run_stage(cfg: &RunConfig, kind: StageKind, corpus: &Corpus, dir: &Path) -> Result<StageReport> {
    cfg.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stage = cfg.stage(kind);
    for up in kind.upstream() {
        let path = dir.join(up.checkpoint_file());
        if !path.exists() {
            return Err(Error::MissingUpstream {
                stage: kind.as_str().into(),
                requires: up.as_str().into(),
                path,
            });
        }
    }
    let log_path = dir.join(format!("{}.log.jsonl", kind.as_str()));
    let logger = Logger::create(&log_path)?;
    let (checkpoint, log, tracked, frozen) = match kind {
        StageKind::Backbone => train_backbone(cfg, stage, corpus, dir, logger)?,
        StageKind::Adapter => train_adapter(cfg, stage, corpus, dir, logger)?,
        StageKind::Vocoder => train_vocoder(cfg, stage, corpus, dir, logger)?,
        StageKind::Postnet => train_postnet(cfg, stage, corpus, dir, logger)?,
    };
    Ok(StageReport { stage: kind, checkpoint, log_path, log, tracked, frozen })
}

type StageOutcome = (PathBuf, Vec<LogRecord>, &'static str, Vec<FrozenCheck>);

/// The frozen teacher: pretrained weights when configured, otherwise a seeded network.
pub fn teacher(cfg: &RunConfig) -> Result<Owned<Encoder>> {
    let spec = BackboneSpec { encoder: cfg.model.encoder.clone(), pld: cfg.model.pld };
    let t = build_encoder(&spec, rng::derive_seed(cfg.seed, "teacher", 0), false)?;
    if let Some(path) = &cfg.pretrained_teacher {
        checkpoint::load_pretrained(path, &t.store)?;
    }
    Ok(t)
}

/// A student ready for distillation: the teacher's weights plus its own mask embedding.
pub fn student(cfg: &RunConfig, teacher: &Owned<Encoder>) -> Result<Owned<Encoder>> {
    let spec = BackboneSpec { encoder: cfg.model.encoder.clone(), pld: cfg.model.pld };
    let s = build_encoder(&spec, stage_seed(cfg, StageKind::Backbone, "student"), true)?;
    if cfg.student_from_teacher {
        s.store.copy_from(&teacher.store)?;
    }
    Ok(s)
}

fn train_backbone(cfg: &RunConfig, st: &StageConfig, corpus: &Corpus, dir: &Path, mut log: Logger) -> Result<StageOutcome> {
    let data = corpus.at_rate(ENCODER_RATE)?;
    let teacher = teacher(cfg)?;
    let student = student(cfg, &teacher)?;
    let before = frozen(&[("teacher", &teacher.store)])?;
    let mut opt = Opt::new(student.store.vars(), &cfg.schedule, st.grad_clip)?;
    let seed = stage_seed(cfg, StageKind::Backbone, "data");
    let len = st.segment_samples();
    for step in 0..st.steps {
        let lr = lr_at(step, st.steps, st.peak_lr, &cfg.schedule);
        let pairs = data.degraded_batch(seed, step, st.batch, len)?;
        let noisy: Vec<Waveform> = pairs.iter().map(|p| p.noisy.clone()).collect();
        let clean: Vec<Waveform> = pairs.into_iter().map(|p| p.target).collect();
        let target = teacher.module.forward(&stack(&clean)?, None)?.phonetic.detach();
        let pred = student.module.forward(&stack(&noisy)?, Some(&masks(&noisy, &cfg.model.pld)?))?.phonetic;
        let loss = distill_loss(&pred, &target)?;
        let value = scalar(&loss)?;
        opt.step(&loss, lr)?;
        log.push(step, lr, BTreeMap::from([("distill".to_string(), value)]), st.log_every)?;
    }
    let checks = verify_frozen(before, &[("teacher", &teacher.store)])?;
    let spec = BackboneSpec { encoder: cfg.model.encoder.clone(), pld: cfg.model.pld };
    let path = save_stage(dir, StageKind::Backbone, &student.store, &spec, st.steps as u64, student.store_seed())?;
    Ok((path, log.finish()?, "distill", checks))
}

/// Frozen encoder outputs for the adapter: (degraded acoustic, enhanced phonetic, clean acoustic).
fn adapter_inputs(enc: &Encoder, data: &StageData, pld: &PldConfig, seed: u64, step: usize, st: &StageConfig) -> Result<(Tensor, Tensor, Tensor)> {
    let pairs = data.degraded_batch(seed, step, st.batch, st.segment_samples())?;
    let noisy: Vec<Waveform> = pairs.iter().map(|p| p.noisy.clone()).collect();
    let clean: Vec<Waveform> = pairs.into_iter().map(|p| p.target).collect();
    let deg = enc.forward(&stack(&noisy)?, Some(&masks(&noisy, pld)?))?;
    let cln = enc.forward(&stack(&clean)?, Some(&masks(&clean, pld)?))?;
    Ok((deg.acoustic.detach(), deg.phonetic.detach(), cln.acoustic.detach()))
}

fn train_adapter(cfg: &RunConfig, st: &StageConfig, corpus: &Corpus, dir: &Path, mut log: Logger) -> Result<StageOutcome> {
    let data = corpus.at_rate(ENCODER_RATE)?;
    let (bspec, enc) = load_encoder(dir, "adapter")?;
    let before = frozen(&[("backbone", &enc.store)])?;
    let spec = AdapterSpec { rep_dim: bspec.encoder.model_dim, net: cfg.model.adapter.clone() };
    let gen = build_adapter(&spec, stage_seed(cfg, StageKind::Adapter, "init"))?;
    let disc_store = ParamStore::new(stage_seed(cfg, StageKind::Adapter, "disc"), TRAIN_DTYPE);
    let disc = Msrd::new(&disc_store.root(), spec.rep_dim, &cfg.model.msrd)?;
    let mut g_opt = Opt::new(gen.store.vars(), &cfg.schedule, st.grad_clip)?;
    let mut d_opt = Opt::new(disc_store.vars(), &cfg.schedule, st.grad_clip)?;
    let w = LossWeights::adapter();
    let seed = stage_seed(cfg, StageKind::Adapter, "data");
    for step in 0..st.steps {
        let lr = lr_at(step, st.steps, st.peak_lr, &cfg.schedule);
        let (ra, rp, target) = adapter_inputs(&enc.module, &data, &bspec.pld, seed, step, st)?;
        let fake = gen.module.forward(&ra, &rp)?;
        let rec = mse(&fake, &target)?;
        let mut losses = BTreeMap::from([("rec".to_string(), scalar(&rec)?)]);
        let g_loss = if st.adversarial {
            let d_loss = lsgan_d_tensor(&disc.forward(&target)?.scores, &disc.forward(&fake.detach())?.scores)?;
            losses.insert("d".into(), scalar(&d_loss)?);
            d_opt.step(&d_loss, lr)?;
            let (adv, feat) = generator_adv(&disc.forward(&target)?, &disc.forward(&fake)?)?;
            losses.insert("adv".into(), scalar(&adv)?);
            losses.insert("feat".into(), scalar(&feat)?);
            ((adv + (feat * w.feat)?)? + (rec * w.rec)?)?
        } else {
            (rec * w.rec)?
        };
        losses.insert("g_total".into(), scalar(&g_loss)?);
        g_opt.step(&g_loss, lr)?;
        log.push(step, lr, losses, st.log_every)?;
    }
    let checks = verify_frozen(before, &[("backbone", &enc.store)])?;
    let path = save_stage(dir, StageKind::Adapter, &gen.store, &spec, st.steps as u64, gen.store_seed())?;
    Ok((path, log.finish()?, "rec", checks))
}

/// One waveform GAN step shared by the vocoder and post-network stages. Returns the
/// generator loss and fills `losses`.
fn wave_gan_step(
    real: &Tensor,
    fake: &Tensor,
    mel: &MultiscaleMel,
    disc: Option<(&WaveDiscriminators, &mut Opt)>,
    lr: f64,
    losses: &mut BTreeMap<String, f64>,
) -> Result<Tensor> {
    let w = LossWeights::vocoder();
    let mel_loss = mel.forward(real, fake)?;
    losses.insert("mel".into(), scalar(&mel_loss)?);
    let g_loss = match disc {
        Some((d, d_opt)) => {
            let d_loss = lsgan_d_tensor(&d.forward(real)?.scores, &d.forward(&fake.detach())?.scores)?;
            losses.insert("d".into(), scalar(&d_loss)?);
            d_opt.step(&d_loss, lr)?;
            let (adv, feat) = generator_adv(&d.forward(real)?, &d.forward(fake)?)?;
            losses.insert("adv".into(), scalar(&adv)?);
            losses.insert("feat".into(), scalar(&feat)?);
            ((adv + (feat * w.feat)?)? + (mel_loss * w.mel)?)?
        }
        None => (mel_loss * w.mel)?,
    };
    losses.insert("g_total".into(), scalar(&g_loss)?);
    Ok(g_loss)
}

fn train_vocoder(cfg: &RunConfig, st: &StageConfig, corpus: &Corpus, dir: &Path, mut log: Logger) -> Result<StageOutcome> {
    let data = corpus.at_rate(ENCODER_RATE)?;
    let (bspec, enc) = load_encoder(dir, "vocoder")?;
    let before = frozen(&[("backbone", &enc.store)])?;
    let spec = VocoderSpec { rep_dim: bspec.encoder.model_dim, net: cfg.model.vocoder.clone(), head: cfg.model.head };
    let gen = build_vocoder(&spec, stage_seed(cfg, StageKind::Vocoder, "init"))?;
    let disc_store = ParamStore::new(stage_seed(cfg, StageKind::Vocoder, "disc"), TRAIN_DTYPE);
    let disc = WaveDiscriminators::new(&disc_store.root(), &cfg.model.wave_disc)?;
    let mut g_opt = Opt::new(gen.store.vars(), &cfg.schedule, st.grad_clip)?;
    let mut d_opt = Opt::new(disc_store.vars(), &cfg.schedule, st.grad_clip)?;
    let mel = MultiscaleMel::new(ENCODER_RATE, TRAIN_DTYPE, &Device::Cpu)?;
    let seed = stage_seed(cfg, StageKind::Vocoder, "data");
    for step in 0..st.steps {
        let lr = lr_at(step, st.steps, st.peak_lr, &cfg.schedule);
        let clean = data.clean_batch(seed, step, st.batch, st.segment_samples())?;
        let real = stack(&clean)?;
        let ra = enc.module.forward(&real, Some(&masks(&clean, &bspec.pld)?))?.acoustic.detach();
        let fake = gen.module.forward(&ra)?;
        let mut losses = BTreeMap::new();
        let d = if st.adversarial { Some((&disc, &mut d_opt)) } else { None };
        let g_loss = wave_gan_step(&real, &fake, &mel, d, lr, &mut losses)?;
        g_opt.step(&g_loss, lr)?;
        log.push(step, lr, losses, st.log_every)?;
    }
    let checks = verify_frozen(before, &[("backbone", &enc.store)])?;
    let path = save_stage(dir, StageKind::Vocoder, &gen.store, &spec, st.steps as u64, gen.store_seed())?;
    Ok((path, log.finish()?, "mel", checks))
}

/// 48 kHz clean targets and the frozen cascade's upsampled output on degraded copies.
fn postnet_batch(
    cascade: &Cascade,
    data48: &StageData,
    data16: &StageData,
    seed: u64,
    step: usize,
    st: &StageConfig,
) -> Result<(Vec<Waveform>, Vec<Waveform>)> {
    let len = st.segment_samples();
    let clean = data48.clean_batch(seed, step, st.batch, len)?;
    let mut inputs = Vec::with_capacity(clean.len());
    for (i, c) in clean.iter().enumerate() {
        let mut r = rng::indexed(seed, "batch.postnet", (step * st.batch + i) as u64);
        let c16 = resample(c, ENCODER_RATE)?;
        let recipe = sample_recipe(&mut r, data16.banks().sizes());
        let noisy = degrade(&c16, data16.banks(), &recipe)?.noisy;
        let y16 = cascade.run(&noisy)?;
        inputs.push(resample(&y16, POSTNET_RATE)?.fit_to(len));
    }
    Ok((clean, inputs))
}

fn train_postnet(cfg: &RunConfig, st: &StageConfig, corpus: &Corpus, dir: &Path, mut log: Logger) -> Result<StageOutcome> {
    let data48 = corpus.at_rate(POSTNET_RATE)?;
    let data16 = corpus.at_rate(ENCODER_RATE)?;
    let cascade = Cascade::load(dir, "postnet")?;
    let upstream = [
        ("backbone", &cascade.encoder.store),
        ("adapter", &cascade.adapter.store),
        ("vocoder", &cascade.vocoder.store),
    ];
    let before = frozen(&upstream)?;
    let gen = build_postnet(&cfg.model.postnet, stage_seed(cfg, StageKind::Postnet, "init"))?;
    let disc_store = ParamStore::new(stage_seed(cfg, StageKind::Postnet, "disc"), TRAIN_DTYPE);
    let disc = WaveDiscriminators::new(&disc_store.root(), &cfg.model.wave_disc)?;
    let mut g_opt = Opt::new(gen.store.vars(), &cfg.schedule, st.grad_clip)?;
    let mut d_opt = Opt::new(disc_store.vars(), &cfg.schedule, st.grad_clip)?;
    let mel = MultiscaleMel::new(POSTNET_RATE, TRAIN_DTYPE, &Device::Cpu)?;
    let seed = stage_seed(cfg, StageKind::Postnet, "data");
    for step in 0..st.steps {
        let lr = lr_at(step, st.steps, st.peak_lr, &cfg.schedule);
        let (clean, inputs) = postnet_batch(&cascade, &data48, &data16, seed, step, st)?;
        let real = stack(&clean)?;
        let fake = gen.module.forward(&stack(&inputs)?)?;
        let mut losses = BTreeMap::new();
        let d = if st.adversarial { Some((&disc, &mut d_opt)) } else { None };
        let g_loss = wave_gan_step(&real, &fake, &mel, d, lr, &mut losses)?;
        g_opt.step(&g_loss, lr)?;
        log.push(step, lr, losses, st.log_every)?;
    }
    let checks = verify_frozen(before, &upstream)?;
    let path = save_stage(dir, StageKind::Postnet, &gen.store, &cfg.model.postnet, st.steps as u64, gen.store_seed())?;
    Ok((path, log.finish()?, "mel", checks))
}

impl<M> Owned<M> {
    fn store_seed(&self) -> u64 {
        self.store.seed()
    }
}

/// Runs every stage in dependency order.
pub fn run_all(cfg: &RunConfig, corpus: &Corpus, dir: &Path) -> Result<Vec<StageReport>> {
    StageKind::ALL.into_iter().map(|k| run_stage(cfg, k, corpus, dir)).collect()
}

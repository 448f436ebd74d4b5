//! The eleven acceptance criteria, one test each. Every test prints a single
//! `criterion NN <name>: PASS|FAIL (...)` line before asserting.
//!
//! Run with `cargo test -p unipase-core --test acceptance -- --nocapture` to see the lines.

use std::f64::consts::PI;
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use rand::Rng;
use rustfft::num_complex::Complex64;
use unipase_core::backbone::{distill_loss, Encoder, EncoderConfig};
use unipase_core::degrade::{apply_packet_loss, expected_extra_marginal, sample_recipe, BankSizes, Distortion, DistortionKind};
use unipase_core::dsp::{istft, stft, Spectrogram, WindowKind};
use unipase_core::generator::{Adapter, IstftHeadConfig, VocosConfig, Vocoder};
use unipase_core::nn::{finite_difference_check, ParamStore};
use unipase_core::objectives::{
    composite_g_loss, feature_match_loss, feature_match_tensor, lsgan_d_loss, lsgan_d_tensor, lsgan_g_loss, lsgan_g_tensor,
    mse, multiscale_mel_loss, recon_loss, LossParts, LossWeights, Msrd, MsrdConfig, MultiscaleMel, WaveDiscConfig,
    WaveDiscriminators,
};
use unipase_core::pipeline::{
    lr_at, run_all, run_stage, teacher, Corpus, CorpusConfig, Enhancer, RunConfig, ScheduleConfig, StageKind,
};
use unipase_core::pld::{detect, PldConfig};
use unipase_core::postnet::{blend, blend_profile, Postnet, PostnetConfig};
use unipase_core::synth::SynthCorpusConfig;
use unipase_core::{rng, Waveform};

fn verdict(id: u32, name: &str, ok: bool, detail: String) {
    println!("criterion {id:02} {name}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {id} {name}: {detail}");
}

// ---------------------------------------------------------------- 1, 2: packet-loss detection

/// Direct transcription of the published detection loop, 1-based indices included.
fn pld_reference(x: &[f64], fs: u32, t_packet: f64, eps: f64, r_min: f64) -> Vec<bool> {
    let p = (fs as f64 * t_packet).round() as usize;
    let l = x.len();
    let n = l / p;
    let mut m = vec![false; n];
    for i in 1..=n {
        let xi = &x[(i - 1) * p..i * p];
        let mut r = 0.0;
        for j in 1..=p {
            if xi[j - 1].abs() < eps {
                r += 1.0;
            }
        }
        r /= p as f64;
        if r >= r_min {
            m[i - 1] = true;
        }
    }
    m
}

#[test]
fn c01_pld_oracle_equivalence() {
    let start = Instant::now();
    let mut r = rng::stream(101, "c01");
    let mut mismatched = 0usize;
    let mut flags_checked = 0usize;
    for case in 0..1000 {
        let fs = [8000u32, 16000, 22050, 44100, 48000][r.gen_range(0..5)];
        let t_packet = if fs == 22050 || fs == 44100 { 0.02 } else { [0.01, 0.02][r.gen_range(0..2)] };
        let (eps, r_min) = if case % 2 == 0 { (1e-4, 0.99) } else { (10f64.powf(r.gen_range(-5.0..-2.0)), r.gen_range(0.5..1.0)) };
        let p = (fs as f64 * t_packet).round() as usize;
        let len = r.gen_range(0..fs as usize / 2);
        let mut x: Vec<f64> = (0..len).map(|_| r.gen_range(-0.5..0.5)).collect();
        // Zeroed, near-threshold and partly silent packets.
        for k in 0..len / p {
            let seg = &mut x[k * p..(k + 1) * p];
            match r.gen_range(0..6) {
                0 => seg.fill(0.0),
                1 => seg.iter_mut().for_each(|v| *v = eps * [0.5, 1.0, 0.999_999, 1.000_001][r.gen_range(0..4)]),
                2 => {
                    let keep = r.gen_range(0..=p / 20);
                    seg[keep..].fill(0.0);
                }
                3 => seg.iter_mut().for_each(|v| *v *= 1e-4),
                _ => {}
            }
        }
        let cfg = PldConfig { packet_duration: t_packet, amplitude_threshold: eps, min_zero_ratio: r_min };
        let got = detect(&Waveform::new(x.clone(), fs).unwrap(), &cfg).unwrap();
        let want = pld_reference(&x, fs, t_packet, eps, r_min);
        assert_eq!(got.flags.len(), want.len());
        mismatched += got.flags.iter().zip(&want).filter(|(a, b)| a != b).count();
        flags_checked += want.len();
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        "PLD oracle equivalence",
        mismatched == 0 && secs < 10.0,
        format!("{mismatched} mismatches over {flags_checked} flags, {secs:.2} s"),
    );
}

#[test]
fn c02_pld_published_config() {
    let cfg = PldConfig::default();
    assert_eq!((cfg.packet_duration, cfg.amplitude_threshold, cfg.min_zero_ratio), (0.020, 1e-4, 0.99));
    let fs = 16000u32;
    let p = 320;
    let n = 50;
    // 0.6 V offset sine never comes near the threshold outside the zeroed packets.
    let mut x: Vec<f64> = (0..n * p).map(|i| 0.6 + 0.3 * (2.0 * PI * 220.0 * i as f64 / fs as f64).sin()).collect();
    let lost = [3usize, 4, 5, 6, 7, 20, 31, 32, 33, 49];
    for &k in &lost {
        x[k * p..(k + 1) * p].fill(0.0);
    }
    // 317 of 320 silent samples reaches the 0.99 ratio; 316 does not.
    x[40 * p + 3..41 * p].fill(0.0);
    x[41 * p + 4..42 * p].fill(0.0);
    // Values just under the threshold count as silent.
    x[45 * p..46 * p].fill(0.99e-4);
    let mut expected = vec![false; n];
    for k in lost.iter().copied().chain([40, 45]) {
        expected[k] = true;
    }
    let got = detect(&Waveform::new(x, fs).unwrap(), &cfg).unwrap();
    let ok = got.flags == expected;
    verdict(2, "PLD published config", ok, format!("mask {}", got.to_bit_string()));
}

// ---------------------------------------------------------------- 3: post-network blend

#[test]
fn c03_blend_exactness() {
    let cfg = PostnetConfig::default();
    assert_eq!((cfg.fc_bins, cfg.delta_bins), (256, 24));
    let profile = blend_profile(&cfg).unwrap();
    let n_freq = cfg.n_freq();
    let mut r = rng::stream(103, "c03");
    let mut copied_ok = true;
    let mut high_ok = true;
    for _ in 0..100 {
        let frames = r.gen_range(1..12);
        let mut rand_spec = |scale: f64| {
            let bins = (0..n_freq * frames)
                .map(|_| Complex64::new(r.gen_range(-scale..scale), r.gen_range(-scale..scale)))
                .collect();
            Spectrogram::from_bins(bins, frames, cfg.fft_size, cfg.hop, 48000, WindowKind::Hann).unwrap()
        };
        let x = rand_spec(10.0);
        let h = rand_spec(1e6);
        let y = blend(&x, &h, &profile).unwrap();
        for t in 0..frames {
            for f in 0..=232 {
                let (a, b) = (y.get(f, t), x.get(f, t));
                copied_ok &= a.re.to_bits() == b.re.to_bits() && a.im.to_bits() == b.im.to_bits();
            }
            // Above the cutoff the generated spectrum is added at full weight.
            for f in 257..n_freq {
                high_ok &= y.get(f, t) == x.get(f, t) + h.get(f, t);
            }
        }
    }
    let a = &profile.alpha;
    let anchors = a[256] == 1.0 && a[244] == 0.5 && a[232] == 0.0 && a[233] > 0.0;
    verdict(
        3,
        "blend exactness",
        copied_ok && high_ok && anchors,
        format!("bins 0-232 bit-identical: {copied_ok}; alpha[232]={} alpha[244]={} alpha[256]={}", a[232], a[244], a[256]),
    );
}

// ---------------------------------------------------------------- 4: loss formulas

fn o_lsgan_g(fake: &[f64]) -> f64 {
    let mut s = 0.0;
    for v in fake {
        s += (v - 1.0) * (v - 1.0);
    }
    s / fake.len() as f64
}

fn o_lsgan_d(real: &[f64], fake: &[f64]) -> f64 {
    let mut a = 0.0;
    for v in real {
        a += (v - 1.0) * (v - 1.0);
    }
    let mut b = 0.0;
    for v in fake {
        b += v * v;
    }
    a / real.len() as f64 + b / fake.len() as f64
}

fn o_recon(r: &[Vec<f64>], q: &[Vec<f64>]) -> f64 {
    let (mut s, mut n) = (0.0, 0.0);
    for t in 0..r.len() {
        for d in 0..r[t].len() {
            s += (r[t][d] - q[t][d]).powi(2);
            n += 1.0;
        }
    }
    s / n
}

fn o_feature_match(real: &[Vec<Vec<f64>>], fake: &[Vec<Vec<f64>>]) -> f64 {
    let (mut total, mut maps) = (0.0, 0.0);
    for k in 0..real.len() {
        for l in 0..real[k].len() {
            let mut s = 0.0;
            for i in 0..real[k][l].len() {
                s += (real[k][l][i] - fake[k][l][i]).abs();
            }
            total += s / real[k][l].len() as f64;
            maps += 1.0;
        }
    }
    total / maps
}

/// Naive-DFT log-Mel spectrogram: centred zero-padded frames, periodic Hann, HTK Mel
/// triangles with unit peaks, magnitude sums, natural log with a 1e-5 floor.
fn o_log_mel(x: &[f64], rate: f64, n_fft: usize, n_mels: usize) -> Vec<Vec<f64>> {
    let hop = n_fft / 4;
    let mel = |hz: f64| 2595.0 * (1.0 + hz / 700.0).log10();
    let hz = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let top = mel(rate / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2).map(|i| hz(top * i as f64 / (n_mels + 1) as f64)).collect();
    let frames = 1 + x.len() / hop;
    let mut out = vec![vec![0.0; frames]; n_mels];
    for t in 0..frames {
        let mut mags = vec![0.0; n_fft / 2 + 1];
        for (k, mag) in mags.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for n in 0..n_fft {
                let idx = (t * hop + n) as isize - (n_fft / 2) as isize;
                if idx < 0 || idx as usize >= x.len() {
                    continue;
                }
                let w = (PI * n as f64 / n_fft as f64).sin().powi(2);
                let ang = -2.0 * PI * (k * n) as f64 / n_fft as f64;
                re += x[idx as usize] * w * ang.cos();
                im += x[idx as usize] * w * ang.sin();
            }
            *mag = (re * re + im * im).sqrt();
        }
        for m in 0..n_mels {
            let mut e = 0.0;
            for (k, a) in mags.iter().enumerate() {
                let f = k as f64 * rate / n_fft as f64;
                let rise = (f - edges[m]) / (edges[m + 1] - edges[m]);
                let fall = (edges[m + 2] - f) / (edges[m + 2] - edges[m + 1]);
                let w = rise.min(fall);
                if w > 0.0 {
                    e += w * a;
                }
            }
            out[m][t] = e.max(1e-5).ln();
        }
    }
    out
}

fn o_multiscale_mel(x: &[f64], y: &[f64], rate: f64) -> f64 {
    let mut total = 0.0;
    for (w, m) in [(32, 5), (64, 10), (128, 20), (256, 40), (512, 80), (1024, 160), (2048, 320)] {
        let (a, b) = (o_log_mel(x, rate, w, m), o_log_mel(y, rate, w, m));
        let (mut s, mut n) = (0.0, 0.0);
        for (ra, rb) in a.iter().zip(&b) {
            for (u, v) in ra.iter().zip(rb) {
                s += (u - v).abs();
                n += 1.0;
            }
        }
        total += s / n;
    }
    total
}

fn t1(v: &[f64]) -> Tensor {
    Tensor::from_vec(v.to_vec(), v.len(), &Device::Cpu).unwrap()
}

fn val(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

#[test]
fn c04_loss_formula_reproduction() {
    let mut r = rng::stream(104, "c04");
    let mut worst = 0.0f64;
    let mut note = |got: f64, want: f64| worst = worst.max((got - want).abs());
    let vec_of = |n: usize, r: &mut rng::Rng| -> Vec<f64> { (0..n).map(|_| r.gen_range(-2.0..2.0)).collect() };
    for _ in 0..20 {
        let fake = vec_of(r.gen_range(1..40), &mut r);
        let real = vec_of(r.gen_range(1..40), &mut r);
        note(lsgan_g_loss(&fake), o_lsgan_g(&fake));
        note(lsgan_d_loss(&real, &fake), o_lsgan_d(&real, &fake));
        note(val(&lsgan_g_tensor(&[t1(&fake)]).unwrap()), o_lsgan_g(&fake));
        note(val(&lsgan_d_tensor(&[t1(&real)], &[t1(&fake)]).unwrap()), o_lsgan_d(&real, &fake));

        let (t, d) = (r.gen_range(1..20), r.gen_range(1..10));
        let a: Vec<Vec<f64>> = (0..t).map(|_| vec_of(d, &mut r)).collect();
        let b: Vec<Vec<f64>> = (0..t).map(|_| vec_of(d, &mut r)).collect();
        note(recon_loss(&a, &b).unwrap(), o_recon(&a, &b));
        let flat = |m: &[Vec<f64>]| Tensor::from_vec(m.concat(), (t, d), &Device::Cpu).unwrap();
        note(val(&mse(&flat(&a), &flat(&b)).unwrap()), o_recon(&a, &b));

        let subs = r.gen_range(1..4);
        let shape: Vec<Vec<usize>> = (0..subs).map(|_| (0..r.gen_range(1..4)).map(|_| r.gen_range(1..30)).collect()).collect();
        let maps = |r: &mut rng::Rng| -> Vec<Vec<Vec<f64>>> {
            shape.iter().map(|ls| ls.iter().map(|&n| (0..n).map(|_| r.gen_range(-2.0..2.0)).collect()).collect()).collect()
        };
        let (fr, ff) = (maps(&mut r), maps(&mut r));
        note(feature_match_loss(&fr, &ff).unwrap(), o_feature_match(&fr, &ff));
        let tens = |m: &[Vec<Vec<f64>>]| -> Vec<Vec<Tensor>> { m.iter().map(|ls| ls.iter().map(|v| t1(v)).collect()).collect() };
        note(val(&feature_match_tensor(&tens(&fr), &tens(&ff)).unwrap()), o_feature_match(&fr, &ff));
    }
    for seed in 0..3u64 {
        let mut rr = rng::stream(seed, "c04.mel");
        let x: Vec<f64> = (0..4096).map(|_| rr.gen_range(-0.5..0.5)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.7 * v + rr.gen_range(-0.05..0.05)).collect();
        let (wx, wy) = (Waveform::new(x.clone(), 16000).unwrap(), Waveform::new(y.clone(), 16000).unwrap());
        note(multiscale_mel_loss(&wx, &wy).unwrap(), o_multiscale_mel(&x, &y, 16000.0));
    }
    let unit = LossParts { adv: 1.0, feat: 1.0, rec: 1.0, mel: 1.0 };
    let adapter = composite_g_loss(&unit, &LossWeights::adapter());
    let vocoder = composite_g_loss(&unit, &LossWeights::vocoder());
    verdict(
        4,
        "loss formula reproduction",
        worst <= 1e-9 && adapter == 202.0 && vocoder == 32.0,
        format!("max |impl - oracle| = {worst:.3e}; adapter composite {adapter}; vocoder composite {vocoder}"),
    );
}

// ---------------------------------------------------------------- 5: gradient checks

fn smooth(b: usize, n: usize, seed: u64) -> Tensor {
    let v: Vec<f64> = (0..b * n).map(|i| 0.3 * ((i as f64 + 1.0) * (0.013 + 0.007 * seed as f64)).sin()).collect();
    Tensor::from_vec(v, (b, n), &Device::Cpu).unwrap()
}

fn toy_vocos() -> VocosConfig {
    VocosConfig { hidden_dim: 8, n_resnet_blocks: 1, n_convnext_blocks: 1, intermediate_dim: 12, has_attention: true, attention_heads: 2 }
}

#[test]
fn c05_gradient_checks() {
    let start = Instant::now();
    let dev = Device::Cpu;
    let mut results: Vec<(&str, f64)> = Vec::new();
    // Gradients below the floor count as zero: exactly-zero gradients (softmax-invariant
    // key biases, biases feeding a normalization) leave only roundoff in the difference.
    let (step, floor) = (1e-5, 1e-6);

    // Student encoder under the distillation objective.
    let enc_cfg = EncoderConfig { cnn_channels: 8, strides: vec![10, 32], n_layers: 2, model_dim: 8, n_heads: 2, ffn_dim: 16 };
    let t_store = ParamStore::new(1, DType::F64);
    let teacher_enc = Encoder::new(&t_store.root(), &enc_cfg, false).unwrap();
    let s_store = ParamStore::new(2, DType::F64);
    let student_enc = Encoder::new(&s_store.root(), &enc_cfg, true).unwrap();
    let clean = smooth(1, 1280, 1);
    let noisy = (&clean + smooth(1, 1280, 7) * 0.3).unwrap();
    let mask = Tensor::new(&[[0.0f64, 1.0, 0.0, 1.0]], &dev).unwrap();
    let target = teacher_enc.forward(&clean, None).unwrap().phonetic.detach();
    let rep = finite_difference_check(&s_store, || distill_loss(&student_enc.forward(&noisy, Some(&mask))?.phonetic, &target), 3, step, floor, 5)
        .unwrap();
    results.push(("encoder", rep.max_rel_err));

    // Adapter under adversarial + feature matching + reconstruction, and the representation discriminator.
    let msrd_cfg = MsrdConfig { hidden_channels: vec![4, 8], layers_per_sub: 2, ..MsrdConfig::default() };
    let d_store = ParamStore::new(3, DType::F64);
    let msrd = Msrd::new(&d_store.root(), 4, &msrd_cfg).unwrap();
    let a_store = ParamStore::new(4, DType::F64);
    let adapter = Adapter::new(&a_store.root(), 4, &toy_vocos()).unwrap();
    let ra = smooth(1, 24, 2).reshape((1, 6, 4)).unwrap();
    let rp = smooth(1, 24, 3).reshape((1, 6, 4)).unwrap();
    let clean_ra = smooth(1, 24, 4).reshape((1, 6, 4)).unwrap();
    let w = LossWeights::adapter();
    let rep = finite_difference_check(
        &a_store,
        || {
            let fake = adapter.forward(&ra, &rp)?;
            let (df, dr) = (msrd.forward(&fake)?, msrd.forward(&clean_ra)?);
            let g = (lsgan_g_tensor(&df.scores)? + (feature_match_tensor(&dr.features, &df.features)? * w.feat)?)?;
            Ok((g + (mse(&fake, &clean_ra)? * w.rec)?)?)
        },
        2,
        step,
        floor,
        6,
    )
    .unwrap();
    results.push(("adapter", rep.max_rel_err));
    let fake = adapter.forward(&ra, &rp).unwrap().detach();
    let rep = finite_difference_check(
        &d_store,
        || lsgan_d_tensor(&msrd.forward(&clean_ra)?.scores, &msrd.forward(&fake)?.scores),
        2,
        step,
        floor,
        7,
    )
    .unwrap();
    results.push(("representation discriminator", rep.max_rel_err));

    // Vocoder under Mel + adversarial losses, and the waveform discriminators.
    let head = IstftHeadConfig { fft_size: 64, hop: 16, rate: 16000 };
    let v_store = ParamStore::new(8, DType::F64);
    let vocoder = Vocoder::new(&v_store.root(), 4, &toy_vocos(), head).unwrap();
    let wd_cfg = WaveDiscConfig {
        periods: vec![2, 3],
        period_channels: vec![4, 4],
        resolutions: vec![(128, 32), (64, 16)],
        spectral_channels: vec![4, 4],
        slope: 0.1,
    };
    let wd_store = ParamStore::new(9, DType::F64);
    let discs = WaveDiscriminators::new(&wd_store.root(), &wd_cfg).unwrap();
    let frames = 130;
    let rep_in = smooth(1, frames * 4, 5).reshape((1, frames, 4)).unwrap();
    let real = smooth(1, frames * 16, 9);
    let mel = MultiscaleMel::new(16000, DType::F64, &dev).unwrap();
    let rep = finite_difference_check(&v_store, || mel.forward(&real, &vocoder.forward(&rep_in)?), 1, step, floor, 10).unwrap();
    results.push(("vocoder mel", rep.max_rel_err));
    let rep =
        finite_difference_check(&v_store, || lsgan_g_tensor(&discs.forward(&vocoder.forward(&rep_in)?)?.scores), 1, step, floor, 10)
            .unwrap();
    results.push(("vocoder adversarial", rep.max_rel_err));
    let y = vocoder.forward(&rep_in).unwrap().detach();
    let rep = finite_difference_check(
        &wd_store,
        || lsgan_d_tensor(&discs.forward(&real)?.scores, &discs.forward(&y)?.scores),
        2,
        step,
        floor,
        11,
    )
    .unwrap();
    results.push(("waveform discriminators", rep.max_rel_err));

    // Post-network on a 48 kHz waveform.
    let p_store = ParamStore::new(12, DType::F64);
    let pcfg = PostnetConfig { embed_dim: 4, rnn_hidden: 3, n_heads: 2, n_blocks: 1, ..PostnetConfig::default() };
    let postnet = Postnet::new(&p_store.root(), &pcfg).unwrap();
    let x = smooth(1, 3000, 13);
    let target = smooth(1, 3000, 14);
    let rep = finite_difference_check(&p_store, || mse(&postnet.forward(&x)?, &target), 1, step, floor, 14).unwrap();
    results.push(("postnet", rep.max_rel_err));

    let secs = start.elapsed().as_secs_f64();
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let detail = results.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    verdict(5, "gradient checks", worst < 1e-3 && secs < 300.0, format!("{detail}; {secs:.1} s"));
}

// ---------------------------------------------------------------- 6: distillation zero point

fn toy_corpus() -> SynthCorpusConfig {
    SynthCorpusConfig { n_utterances: 8, utterance_s: 1.0, native_rate: 48000, n_noise: 2, n_wind: 1, n_rir: 2, noise_s: 1.0 }
}

#[test]
fn c06_distillation_zero_point() {
    let mut cfg = RunConfig::desk();
    cfg.corpus = CorpusConfig::Synthetic(toy_corpus());
    cfg.backbone.steps = 200;
    cfg.backbone.batch = 2;

    let t = teacher(&cfg).unwrap();
    let s = unipase_core::pipeline::student(&cfg, &t).unwrap();
    let clean = Corpus::from_config(&cfg.corpus, cfg.seed).unwrap().at_rate(16000).unwrap();
    let batch = clean.clean_batch(1, 0, 2, 8000).unwrap();
    let samples: Vec<f32> = batch.iter().flat_map(|w| w.to_f32()).collect();
    let x = Tensor::from_vec(samples, (2, 8000), &Device::Cpu).unwrap();
    let frames = t.module.n_frames(8000);
    let no_loss = Tensor::zeros((2, frames), DType::F32, &Device::Cpu).unwrap();
    let target = t.module.forward(&x, None).unwrap().phonetic;
    let unmasked = val(&distill_loss(&s.module.forward(&x, None).unwrap().phonetic, &target).unwrap());
    let zero_mask = val(&distill_loss(&s.module.forward(&x, Some(&no_loss)).unwrap().phonetic, &target).unwrap());

    let dir = tempfile::tempdir().unwrap();
    let corpus = Corpus::from_config(&cfg.corpus, cfg.seed).unwrap();
    let before = t.store.hash().unwrap();
    let report = run_stage(&cfg, StageKind::Backbone, &corpus, dir.path()).unwrap();
    let check = report.frozen.iter().find(|c| c.module == "teacher").expect("teacher hash recorded");
    let after = teacher(&cfg).unwrap().store.hash().unwrap();
    let invariant = check.before == check.after && check.before == before && after == before;
    verdict(
        6,
        "distillation zero point",
        unmasked == 0.0 && zero_mask == 0.0 && invariant && report.log.len() == 200,
        format!("loss {unmasked} (no mask), {zero_mask} (empty mask); teacher hash unchanged over {} steps: {invariant}", report.log.len()),
    );
}

// ---------------------------------------------------------------- 7, 8: augmentation

#[test]
fn c07_augmentation_statistics() {
    let start = Instant::now();
    let n = 100_000;
    let sizes = BankSizes { noise: 8, wind: 2, rir: 6 };
    let mut r = rng::stream(107, "c07");
    let mut per_kind = [0usize; 4];
    let (mut reverb, mut wind) = (0usize, 0usize);
    for _ in 0..n {
        let recipe = sample_recipe(&mut r, sizes);
        reverb += recipe.reverb.is_some() as usize;
        wind += recipe.noise.as_ref().is_some_and(|s| s.is_wind) as usize;
        for d in &recipe.extra {
            per_kind[DistortionKind::ALL.iter().position(|k| *k == d.kind()).unwrap()] += 1;
        }
    }
    let freq: Vec<f64> = per_kind.iter().map(|&c| c as f64 / n as f64).collect();
    let (fr, fw) = (reverb as f64 / n as f64, wind as f64 / n as f64);
    let secs = start.elapsed().as_secs_f64();
    // Expected per-type frequency: E[#extras] / 4 = (0.40 + 2 * 0.20 + 3 * 0.15) / 4.
    let expected = (0.40 + 2.0 * 0.20 + 3.0 * 0.15) / 4.0;
    assert_eq!(expected, expected_extra_marginal());
    let ok = freq.iter().all(|f| (f - 0.3125).abs() <= 0.01) && (fr - 0.5).abs() <= 0.01 && (fw - 0.05).abs() <= 0.005 && secs < 30.0;
    verdict(7, "augmentation statistics", ok, format!("per-type {freq:.4?}, reverb {fr:.4}, wind {fw:.4}, {secs:.2} s"));
}

#[test]
fn c08_packet_loss_legality() {
    let mut r = rng::stream(108, "c08");
    let (mut worst_gap, mut worst_run, mut bad) = (0.0f64, 0usize, 0usize);
    for _ in 0..10_000 {
        // Rates and lengths as the recipe sampler would produce them.
        let Distortion::PacketLoss { duration_s, rate, max_continuous } = (loop {
            let recipe = sample_recipe(&mut r, BankSizes { noise: 1, wind: 1, rir: 1 });
            if let Some(d) = recipe.extra.into_iter().find(|d| d.kind() == DistortionKind::PacketLoss) {
                break d;
            }
        }) else {
            unreachable!()
        };
        let fs = 8000u32;
        let len = r.gen_range(1..=8) * fs as usize / 2 + r.gen_range(0..160);
        let w = Waveform::new(vec![0.25; len], fs).unwrap();
        let (out, mask) = apply_packet_loss(&w, rate, duration_s, max_continuous, &mut r).unwrap();
        let n = mask.len() as f64;
        let gap = (mask.loss_fraction() - rate).abs();
        worst_gap = worst_gap.max(gap * n);
        worst_run = worst_run.max(mask.longest_burst());
        bad += (gap > 1.0 / n || mask.longest_burst() > 10) as usize;
        // Zeroed packets are exactly the flagged ones.
        let p = mask.packet_samples;
        for (i, &f) in mask.flags.iter().enumerate() {
            assert_eq!(out.samples()[i * p..(i + 1) * p].iter().all(|&v| v == 0.0), f);
        }
    }
    verdict(
        8,
        "packet-loss legality",
        bad == 0,
        format!("{bad} violations; worst |fraction - target| = {worst_gap:.3}/N; longest run {worst_run}"),
    );
}

// ---------------------------------------------------------------- 9: STFT and vocoder framing

#[test]
fn c09_stft_round_trip_and_length_law() {
    let mut r = rng::stream(109, "c09");
    let mut worst = 0.0f64;
    for (n_fft, hop, len) in [(1280, 320, 16000), (512, 128, 7777), (64, 16, 1000), (2048, 512, 48000)] {
        let x: Vec<f64> = (0..len).map(|_| r.gen_range(-1.0..1.0)).collect();
        let w = Waveform::new(x, 16000).unwrap();
        let y = istft(&stft(&w, n_fft, hop, WindowKind::Hann).unwrap(), len).unwrap();
        let num: f64 = w.samples().iter().zip(y.samples()).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = w.samples().iter().map(|a| a * a).sum();
        worst = worst.max((num / den).sqrt());
    }
    let store = ParamStore::new(1, DType::F32);
    let vocoder = Vocoder::new(&store.root(), 8, &toy_vocos(), IstftHeadConfig::default()).unwrap();
    let mut lengths = Vec::new();
    for t in [1usize, 7, 50, 1000] {
        let rep = Tensor::randn(0f32, 1.0, (1, t, 8), &Device::Cpu).unwrap();
        lengths.push((t, vocoder.forward(&rep).unwrap().dims()[1]));
    }
    let law = lengths.iter().all(|&(t, n)| n == t * 320);
    verdict(9, "STFT round trip and vocoder length law", worst <= 1e-6 && law, format!("worst relative error {worst:.2e}; lengths {lengths:?}"));
}

// ---------------------------------------------------------------- 10: end-to-end smoke run

#[test]
fn c10_end_to_end_smoke() {
    let start = Instant::now();
    let cfg = RunConfig::desk();
    let CorpusConfig::Synthetic(corpus_cfg) = &cfg.corpus else { unreachable!() };
    let minutes = corpus_cfg.total_duration_s() / 60.0;
    let dir = tempfile::tempdir().unwrap();
    let corpus = Corpus::from_config(&cfg.corpus, cfg.seed).unwrap();
    let reports = run_all(&cfg, &corpus, dir.path()).unwrap();
    let mut trends = Vec::new();
    let mut all_down = true;
    for rep in &reports {
        let steps = rep.log.len();
        let (first, last) = rep.trend(100).expect("at least 100 steps");
        all_down &= steps == 500 && last < first && rep.frozen.iter().all(|c| c.before == c.after);
        trends.push(format!("{} {} {first:.4}->{last:.4}", rep.stage, rep.tracked));
    }

    let enhancer = Enhancer::load(dir.path()).unwrap();
    let mut outputs_ok = true;
    let mut calls = Vec::new();
    for rate in [8000u32, 16000, 48000] {
        let x = unipase_core::synth::speech(77, rate as u64, 1.0, rate).unwrap();
        let before = enhancer.postnet_calls();
        let y = enhancer.enhance(&x).unwrap();
        calls.push(enhancer.postnet_calls() - before);
        outputs_ok &= y.rate() == rate && y.len() == x.len() && y.samples().iter().all(|v| v.is_finite() && v.abs() <= 1.0);
    }
    let gate = calls == [0, 0, 1];
    let minutes_taken = start.elapsed().as_secs_f64() / 60.0;
    verdict(
        10,
        "end-to-end smoke",
        (minutes - 30.0).abs() < 1e-9 && all_down && outputs_ok && gate && minutes_taken < 120.0,
        format!(
            "{minutes:.0} min corpus; {}; outputs finite and within [-1, 1]: {outputs_ok}; postnet calls at 8/16/48 kHz {calls:?}; {minutes_taken:.1} min",
            trends.join(", ")
        ),
    );
}

// ---------------------------------------------------------------- 11: schedule

#[test]
fn c11_schedule_reproduction() {
    let sched = ScheduleConfig::default();
    let total = 10_000;
    let peak = 2e-4;
    let at = |s| lr_at(s, total, peak, &sched);
    let anchors = at(0) == 0.0 && at(total / 10) == peak && at(total) == 1e-6;
    // Largest per-step change: the warmup slope or the steepest point of the half cosine.
    let warm = total as f64 * 0.1;
    let bound = (peak / warm).max((peak - 1e-6) * PI / (2.0 * (total as f64 - warm))) * (1.0 + 1e-9);
    let worst = (0..total).map(|s| (at(s + 1) - at(s)).abs()).fold(0.0, f64::max);
    verdict(
        11,
        "schedule reproduction",
        anchors && worst <= bound,
        format!("lr(0)={} lr(1000)={} lr(10000)={}; max step change {worst:.3e} <= {bound:.3e}", at(0), at(total / 10), at(total)),
    );
}

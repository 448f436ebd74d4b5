use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use unipase_core::dsp::wav::{read_wav, write_wav, WavEncoding};
use unipase_core::dsp::{stft, WindowKind};
use unipase_core::pipeline::{CorpusConfig, RunConfig, StageKind};
use unipase_core::synth::SynthCorpusConfig;
use unipase_core::Waveform;

fn unipase(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unipase")).args(args).env("RUST_LOG", "warn").output().expect("spawn unipase")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn help_lists_every_documented_flag() {
    let cases: [(&str, &[&str]); 6] = [
        ("simulate", &["--manifest", "--out", "--seed", "--count"]),
        ("train", &["--config", "--checkpoint-dir", "--stage", "--seed"]),
        ("enhance", &["--out", "--checkpoint-dir"]),
        ("evaluate", &["--metrics", "--out"]),
        ("inspect", &["--mode", "--out"]),
        ("synth-corpus", &["--out", "--seed", "--count"]),
    ];
    for (cmd, flags) in cases {
        let o = unipase(&[cmd, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{cmd}");
        let text = stdout(&o);
        for f in flags {
            assert!(text.contains(f), "{cmd} help lacks {f}");
        }
    }
    assert_eq!(unipase(&["--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(unipase(&[]).status.code(), Some(1));
    assert_eq!(unipase(&["simulate", "--out", "x"]).status.code(), Some(1));
    assert_eq!(unipase(&["train", "--checkpoint-dir", "x", "--stage", "decoder"]).status.code(), Some(1));
    assert_eq!(unipase(&["inspect", "a.wav", "--mode", "spectrogram"]).status.code(), Some(1));
}

fn tiny_corpus(dir: &Path) -> PathBuf {
    let o = unipase(&["synth-corpus", "--out", s(dir), "--seed", "2", "--count", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    dir.join("manifest.jsonl")
}

#[test]
fn simulate_is_reproducible_and_count_zero_is_empty() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = tiny_corpus(&tmp.path().join("corpus"));

    let empty = tmp.path().join("empty");
    let o = unipase(&["simulate", "--manifest", s(&manifest), "--out", s(&empty), "--seed", "1", "--count", "0"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read_dir(&empty).unwrap().count(), 0);

    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let o = unipase(&["simulate", "--manifest", s(&manifest), "--out", s(d), "--seed", "9", "--count", "4"]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ta = tree(&a);
    assert_eq!(ta, tree(&b));
    assert_eq!(ta.len(), 9);
    let recipes = fs::read_to_string(a.join("recipes.jsonl")).unwrap();
    assert_eq!(recipes.lines().count(), 4);
    for line in recipes.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let noisy = read_wav(a.join(v["noisy"].as_str().unwrap())).unwrap();
        let clean = read_wav(a.join(v["clean"].as_str().unwrap())).unwrap();
        assert_eq!((noisy.rate(), noisy.len()), (clean.rate(), clean.len()));
        assert!(v["recipe"].is_object());
    }

    let o = unipase(&["simulate", "--manifest", s(&tmp.path().join("nope.jsonl")), "--out", s(&a), "--count", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn inspect_pld_on_silence_flags_everything() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("silence.wav");
    write_wav(&path, &Waveform::zeros(3200, 16000).unwrap(), WavEncoding::Pcm16).unwrap();
    let o = unipase(&["inspect", s(&path), "--mode", "pld"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l == "packets 10"));
    assert!(text.lines().any(|l| l == "lost 10"));
    assert!(text.lines().any(|l| l == "longest_burst 10"));
    assert!(text.lines().any(|l| l == "mask 1111111111"));
    assert!(text.lines().any(|l| l == "run 0 10"));

    let o = unipase(&["inspect", s(&tmp.path().join("missing.wav")), "--mode", "pld"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn spectrogram_image_puts_a_tone_on_its_bin_row() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("tone.wav");
    let png = tmp.path().join("tone.png");
    // 1 kHz at 16 kHz with a 512-point FFT sits exactly on bin 32.
    let w = Waveform::new((0..16000).map(|i| 0.5 * (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 16000.0).sin()).collect(), 16000)
        .unwrap();
    write_wav(&path, &w, WavEncoding::Float32).unwrap();
    let o = unipase(&["inspect", s(&path), "--mode", "spectrogram", "--out", s(&png)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let img = image::open(&png).unwrap().to_luma8();
    let spec = stft(&w, 512, 128, WindowKind::Hann).unwrap();
    assert_eq!((img.height() as usize, img.width() as usize), (spec.n_freq(), spec.n_frames()));
    let x = img.width() / 2;
    let row = (0..img.height()).max_by_key(|&y| img.get_pixel(x, y)[0]).unwrap();
    assert_eq!(row as usize, spec.n_freq() - 1 - 32);
}

fn write_toy_config(path: &Path) {
    let mut cfg = RunConfig::desk();
    cfg.corpus = CorpusConfig::Synthetic(SynthCorpusConfig {
        n_utterances: 4,
        utterance_s: 0.6,
        native_rate: 48000,
        n_noise: 2,
        n_wind: 1,
        n_rir: 1,
        noise_s: 1.0,
    });
    for k in StageKind::ALL {
        let st = cfg.stage_mut(k);
        st.steps = 2;
        st.batch = 1;
        st.log_every = 1;
    }
    fs::write(path, cfg.to_toml_string().unwrap()).unwrap();
}

#[test]
fn train_enhance_evaluate_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = tmp.path().join("ckpt");
    let inputs = tmp.path().join("in");
    fs::create_dir_all(&inputs).unwrap();
    for (name, rate) in [("a8k.wav", 8000u32), ("b16k.wav", 16000), ("c48k.wav", 48000)] {
        let w = unipase_core::synth::speech(5, rate as u64, 0.5, rate).unwrap();
        write_wav(inputs.join(name), &w, WavEncoding::Float32).unwrap();
    }

    // Missing checkpoints are a dependency error.
    let o = unipase(&["enhance", s(&inputs), "--out", s(&tmp.path().join("x")), "--checkpoint-dir", s(&ckpt)]);
    assert_eq!(o.status.code(), Some(3));
    let o = unipase(&["train", "--checkpoint-dir", s(&ckpt), "--stage", "adapter"]);
    assert_eq!(o.status.code(), Some(3));

    let config = tmp.path().join("toy.toml");
    write_toy_config(&config);
    let o = unipase(&["train", "--config", s(&config), "--checkpoint-dir", s(&ckpt), "--seed", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for k in StageKind::ALL {
        assert!(ckpt.join(k.checkpoint_file()).exists(), "{k}");
    }

    let (out1, out2) = (tmp.path().join("out1"), tmp.path().join("out2"));
    for out in [&out1, &out2] {
        let o = unipase(&["enhance", s(&inputs), "--out", s(out), "--checkpoint-dir", s(&ckpt)]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let t1 = tree(&out1);
    assert_eq!(t1.len(), 3);
    assert_eq!(t1, tree(&out2));
    for (name, rate) in [("a8k.wav", 8000u32), ("b16k.wav", 16000), ("c48k.wav", 48000)] {
        let (x, y) = (read_wav(inputs.join(name)).unwrap(), read_wav(out1.join(name)).unwrap());
        assert_eq!((y.rate(), y.len()), (rate, x.len()));
        assert!(y.samples().iter().all(|v| v.is_finite() && v.abs() <= 1.0));
    }

    let single = tmp.path().join("single.wav");
    let o = unipase(&["enhance", s(&inputs.join("a8k.wav")), "--out", s(&single), "--checkpoint-dir", s(&ckpt)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read(&single).unwrap(), fs::read(out1.join("a8k.wav")).unwrap());

    let metrics = tmp.path().join("metrics.toml");
    fs::write(&metrics, "[[metric]]\nname = \"gone\"\ncommand = [\"/nonexistent/metric-tool\", \"{ref}\", \"{est}\"]\ntimeout_s = 2\n")
        .unwrap();
    let report = tmp.path().join("report");
    let o = unipase(&[
        "evaluate", "--reference", s(&inputs), "--estimate", s(&out1), "--noisy", s(&inputs), "--metrics", s(&metrics), "--out",
        s(&report),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let lines = fs::read_to_string(report.join("report.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 3);
    for line in lines.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["metrics"]["si_sdr"].is_number() && v["metrics"]["log_mel_distance"].is_number());
        assert!(v["metrics"].get("gone").is_none());
        assert_eq!(v["warnings"].as_array().unwrap().len(), 1);
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(report.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["overall"]["count"], 3);
    let by_fraction = summary["plc"]["by_fraction"].as_array().unwrap();
    assert_eq!(by_fraction.iter().map(|b| b["count"].as_u64().unwrap()).sum::<u64>(), 3);
    assert!(fs::read_to_string(report.join("summary.txt")).unwrap().contains("si_sdr"));
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use unipase_core::pipeline::StageKind;
use unipase_core::Error;

mod commands;

/// Universal speech enhancement: simulation, training, enhancement and evaluation.
#[derive(Debug, Parser)]
#[command(name = "unipase", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write degraded/clean pairs and their recipes from a corpus manifest.
    Simulate {
        /// Corpus manifest (one JSON object per line: path, role, rate, duration_s).
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory; receives noisy/, clean/ and recipes.jsonl.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of pairs to write.
        #[arg(long)]
        count: usize,
        /// Sampling rate of the written pairs.
        #[arg(long, default_value_t = 16000)]
        rate: u32,
    },
    /// Train one stage, or all stages in order.
    Train {
        /// Run configuration (TOML). Defaults to the desk-scale configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where checkpoints and loss logs are written and upstream checkpoints are read.
        #[arg(long)]
        checkpoint_dir: PathBuf,
        /// Stage to train; all four run in order when omitted.
        #[arg(long)]
        stage: Option<StageKind>,
        /// Overrides the configuration's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Enhance a WAV file or every WAV file in a directory.
    Enhance {
        input: PathBuf,
        /// Output file, or directory when the input is a directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        checkpoint_dir: PathBuf,
    },
    /// Score estimates against references, matched by file name.
    Evaluate {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        estimate: PathBuf,
        /// Degraded inputs; when given, packet-loss masks are detected on them and the
        /// summary is sliced by loss condition.
        #[arg(long)]
        noisy: Option<PathBuf>,
        /// External metric definitions (TOML with [[metric]] tables).
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Receives report.jsonl, summary.txt and summary.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a packet-loss summary or render a spectrogram.
    Inspect {
        audio: PathBuf,
        #[arg(long, value_enum)]
        mode: InspectMode,
        /// PNG path for spectrogram mode.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a procedural speech corpus with interference banks and a manifest.
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of clean utterances.
        #[arg(long)]
        count: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InspectMode {
    Pld,
    Spectrogram,
}

/// Documented exit codes.
const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_DEPENDENCY: u8 = 3;

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::MissingUpstream { .. } | Error::Checkpoint { .. } | Error::CodecTool { .. } => EXIT_DEPENDENCY,
        Error::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Simulate { manifest, out, seed, count, rate } => commands::simulate(&manifest, &out, seed, count, rate),
        Command::Train { config, checkpoint_dir, stage, seed } => {
            commands::train(config.as_deref(), &checkpoint_dir, stage, seed)
        }
        Command::Enhance { input, out, checkpoint_dir } => commands::enhance(&input, &out, &checkpoint_dir),
        Command::Evaluate { reference, estimate, noisy, metrics, out } => {
            commands::evaluate(&reference, &estimate, noisy.as_deref(), metrics.as_deref(), &out)
        }
        Command::Inspect { audio, mode, out } => match mode {
            InspectMode::Pld => commands::inspect_pld(&audio),
            InspectMode::Spectrogram => match out {
                Some(out) => commands::inspect_spectrogram(&audio, &out),
                None => Err(Error::InvalidArgument("spectrogram mode needs --out".into())),
            },
        },
        Command::SynthCorpus { out, seed, count } => commands::synth_corpus(&out, seed, count),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

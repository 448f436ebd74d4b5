use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("signal of {len} samples is shorter than one frame of {needed}")]
    SignalTooShort { len: usize, needed: usize },

    #[error("window/hop pair fft_size={fft_size} hop={hop} does not satisfy the overlap-add condition")]
    InvalidWindowHop { fft_size: usize, hop: usize },

    #[error("invalid spectrogram: {0}")]
    Spectrogram(String),

    #[error("invalid sampling rate {0}")]
    InvalidRate(u32),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("rate mismatch: {left} Hz vs {right} Hz")]
    RateMismatch { left: u32, right: u32 },

    #[error("{0} has zero power")]
    ZeroPower(&'static str),

    #[error("non-finite sample at index {0}")]
    NonFinite(usize),

    #[error("packet of {duration_s} s at {rate} Hz is not an integer number of samples")]
    NonIntegerPacket { rate: u32, duration_s: f64 },

    #[error("mask has {mask} packets but the encoder produced {frames} frames")]
    MaskMismatch { mask: usize, frames: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("impulse response is empty")]
    EmptyKernel,

    #[error("unsupported audio encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("tensor: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("codec tool `{tool}` failed: {reason}")]
    CodecTool { tool: String, reason: String },

    #[error("recipe references {role} #{index} but the bank holds {len}")]
    UnresolvedBank { role: &'static str, index: usize, len: usize },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("stage `{stage}` requires the `{requires}` checkpoint at {path}")]
    MissingUpstream { stage: String, requires: String, path: PathBuf },

    #[error("training diverged at step {step}: {losses}")]
    Diverged { step: usize, losses: String },

    #[error("config: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for failures caused by missing or broken checkpoints and external tools.
    pub fn is_dependency(&self) -> bool {
        matches!(
            self,
            Error::Checkpoint { .. } | Error::MissingUpstream { .. } | Error::CodecTool { .. }
        )
    }
}

//! Universal speech enhancement: degradation simulation, packet-loss detection,
//! representation-domain enhancement, GAN-trained vocoding and 16 kHz to 48 kHz
//! bandwidth extension.
//!
//! The crate is organised bottom-up:
//!
//! - [`dsp`]: waveforms, STFT/iSTFT, resampling, Mel filterbanks, WAV I/O.
//! - [`pld`]: packet-loss detection producing per-packet masks.
//! - [`degrade`]: training-pair simulation (reverb, noise, clipping, band limit,
//!   codec, packet loss).
//! - [`nn`]: a small set of differentiable layers on top of `candle`.
//! - [`backbone`], [`generator`], [`postnet`], [`objectives`]: the models and losses.
//! - [`pipeline`]: staged training and the end-to-end enhancer.
//! - [`eval`]: signal-level metrics, loss-condition slicing and external metric hooks.

pub mod backbone;
pub mod checkpoint;
pub mod degrade;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod generator;
pub mod nn;
pub mod objectives;
pub mod pipeline;
pub mod pld;
pub mod postnet;
pub mod rng;
pub mod synth;

pub use dsp::{Spectrogram, Waveform};
pub use error::{Error, Result};
pub use pld::{PacketLossMask, PldConfig};

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use super::models::{load_adapter, load_encoder, load_postnet, load_vocoder, Owned};
use crate::backbone::{Encoder, ENCODER_RATE};
use crate::dsp::{resample, Waveform};
use crate::error::{Error, Result};
use crate::generator::{Adapter, Vocoder};
use crate::pld::{detect, PldConfig};
use crate::postnet::{Postnet, POSTNET_RATE};

/// Output peaks above this are scaled down to it.
pub const PEAK_LIMIT: f64 = 0.99;

/// Everything up to the 16 kHz vocoder output.
pub struct Cascade {
    pub encoder: Owned<Encoder>,
    pub adapter: Owned<Adapter>,
    pub vocoder: Owned<Vocoder>,
    pub pld: PldConfig,
}

impl Cascade {
    pub fn load(dir: &Path, needed_by: &str) -> Result<Self> {
        let (spec, encoder) = load_encoder(dir, needed_by)?;
        let (_, adapter) = load_adapter(dir, needed_by)?;
        let (_, vocoder) = load_vocoder(dir, needed_by)?;
        Ok(Self { encoder, adapter, vocoder, pld: spec.pld })
    }

    /// 16 kHz in, 16 kHz out: detect lost packets, encode, refine the acoustic stream
    /// and vocode. The input is zero-padded to whole frames and the output trimmed back.
    pub fn run(&self, wave: &Waveform) -> Result<Waveform> {
        if wave.rate() != ENCODER_RATE {
            return Err(Error::RateMismatch { left: wave.rate(), right: ENCODER_RATE });
        }
        let hop = self.encoder.module.config().total_stride();
        let frames = wave.len().div_ceil(hop).max(1);
        let padded = wave.fit_to(frames * hop);
        let mask = detect(&padded, &self.pld)?;
        let (ra, rp) = self.encoder.module.encode(&padded, Some(&mask))?;
        let ra = self.adapter.module.forward_rep(&ra, &rp)?;
        Ok(self.vocoder.module.synthesize(&ra)?.fit_to(wave.len()))
    }
}

/// The full inference chain at any input rate.
pub struct Enhancer {
    pub cascade: Cascade,
    pub postnet: Owned<Postnet>,
    postnet_calls: AtomicUsize,
}

fn to_rate(w: &Waveform, rate: u32) -> Result<Waveform> {
    if w.rate() == rate {
        Ok(w.clone())
    } else {
        resample(w, rate)
    }
}

impl Enhancer {
    /// Loads all four stage checkpoints from `dir`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let cascade = Cascade::load(dir, "enhance")?;
        let (_, postnet) = load_postnet(dir, "enhance")?;
        Ok(Self::new(cascade, postnet))
    }

    pub fn new(cascade: Cascade, postnet: Owned<Postnet>) -> Self {
        Self { cascade, postnet, postnet_calls: AtomicUsize::new(0) }
    }

    /// Number of times the post-network has run since construction.
    pub fn postnet_calls(&self) -> usize {
        self.postnet_calls.load(Ordering::Relaxed)
    }

    /// Returns audio at the input's rate and length. The 48 kHz post-network only runs
    /// for inputs above 16 kHz.
    pub fn enhance(&self, wave: &Waveform) -> Result<Waveform> {
        if wave.is_empty() {
            return Err(Error::SignalTooShort { len: 0, needed: 1 });
        }
        let rate = wave.rate();
        let y16 = self.cascade.run(&to_rate(wave, ENCODER_RATE)?)?;
        let y = if rate > ENCODER_RATE {
            self.postnet_calls.fetch_add(1, Ordering::Relaxed);
            let y48 = self.postnet.module.enhance(&resample(&y16, POSTNET_RATE)?)?;
            to_rate(&y48, rate)?
        } else {
            to_rate(&y16, rate)?
        };
        let y = y.fit_to(wave.len());
        let peak = y.peak();
        if peak > PEAK_LIMIT {
            y.map(|v| v * PEAK_LIMIT / peak)
        } else {
            Ok(y)
        }
    }
}

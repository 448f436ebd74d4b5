//! Training-pair simulation: reverb, noise mixing and sampled extra distortions.

mod manifest;
mod ops;
mod recipe;

pub use manifest::{CorpusManifest, ManifestEntry, Role};
pub use ops::{
    apply_bandwidth_limit, apply_clipping, apply_codec, apply_packet_loss, apply_reverb, bandwidth_filter,
    convolve, noise_gain, quantile, requantize, sample_loss_flags, scale_noise_to_snr, surrogate_bits,
    surrogate_cutoff_hz, CodecBackend, CodecSpec, BANDWIDTH_STOPBAND_DB, CODEC_TOOL_ENV, DEFAULT_CODEC_TOOL,
};
pub use recipe::{
    expected_extra_marginal, sample_recipe, BankSizes, CodecFormat, DegradationRecipe, Distortion,
    DistortionKind, NoiseSpec, BANDWIDTH_LIMIT_HZ, CLIP_MAX_QUANTILE, CLIP_MIN_QUANTILE, CODEC_QSCALE,
    EXTRA_COUNT_PROBS, MAX_CONTINUOUS_LOSS, PACKET_DURATION_S, PACKET_LOSS_RATE, REVERB_PROB, SNR_RANGE_DB,
    WIND_PROB,
};

use rand::Rng as _;

use crate::dsp::{resample, Waveform};
use crate::error::{Error, Result};
use crate::pld::PacketLossMask;
use crate::rng;

/// Noise, wind and room-impulse sources a recipe indexes into.
#[derive(Debug, Clone, Default)]
pub struct Banks {
    pub noise: Vec<Waveform>,
    pub wind: Vec<Waveform>,
    pub rir: Vec<Waveform>,
    pub codec: CodecBackend,
}

impl Banks {
    pub fn sizes(&self) -> BankSizes {
        BankSizes { noise: self.noise.len(), wind: self.wind.len(), rir: self.rir.len() }
    }
}

#[derive(Debug, Clone)]
pub struct DegradedPair {
    pub noisy: Waveform,
    /// Always the untouched clean input.
    pub target: Waveform,
    pub recipe: DegradationRecipe,
    /// Ground-truth packet mask when the recipe included packet loss.
    pub loss_mask: Option<PacketLossMask>,
}

fn lookup<'a>(bank: &'a [Waveform], role: &'static str, index: usize) -> Result<&'a Waveform> {
    bank.get(index).ok_or(Error::UnresolvedBank { role, index, len: bank.len() })
}

fn at_rate(w: &Waveform, rate: u32) -> Result<Waveform> {
    if w.rate() == rate {
        Ok(w.clone())
    } else {
        resample(w, rate)
    }
}

/// Cuts `len` samples out of `source` starting at a random offset, looping if it is short.
fn crop_loop(source: &Waveform, len: usize, rng: &mut rng::Rng) -> Result<Waveform> {
    if source.is_empty() {
        return Err(Error::ZeroPower("noise"));
    }
    let s = source.samples();
    let offset = rng.gen_range(0..s.len());
    Waveform::new((0..len).map(|i| s[(offset + i) % s.len()]).collect(), source.rate())
}

pub fn degrade(clean: &Waveform, banks: &Banks, recipe: &DegradationRecipe) -> Result<DegradedPair> {
    let rate = clean.rate();
    let mut rng = rng::stream(recipe.seed, "degrade");
    let mut x = clean.clone();
    if let Some(i) = recipe.reverb {
        let rir = at_rate(lookup(&banks.rir, "rir", i)?, rate)?;
        x = apply_reverb(&x, &rir)?;
    }
    if let Some(n) = &recipe.noise {
        let (bank, role) = if n.is_wind { (&banks.wind, "wind") } else { (&banks.noise, "noise") };
        let src = at_rate(lookup(bank, role, n.source)?, rate)?;
        let noise = crop_loop(&src, x.len(), &mut rng)?;
        x = scale_noise_to_snr(&x, &noise, n.snr_db)?;
    }
    let mut loss_mask = None;
    for d in &recipe.extra {
        x = match *d {
            Distortion::Clipping { min_quantile, max_quantile } => apply_clipping(&x, min_quantile, max_quantile)?,
            Distortion::Bandwidth { limit_hz } => apply_bandwidth_limit(&x, limit_hz)?,
            Distortion::Codec { format, qscale } => apply_codec(&x, &banks.codec.spec(format, qscale, rate))?,
            Distortion::PacketLoss { duration_s, rate: loss_rate, max_continuous } => {
                let (y, mask) = apply_packet_loss(&x, loss_rate, duration_s, max_continuous, &mut rng)?;
                loss_mask = Some(mask);
                y
            }
        };
    }
    Ok(DegradedPair { noisy: x, target: clean.clone(), recipe: recipe.clone(), loss_mask })
}

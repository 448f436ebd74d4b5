use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Probabilities of applying 0, 1, 2 or 3 extra distortions.
pub const EXTRA_COUNT_PROBS: [f64; 4] = [0.25, 0.40, 0.20, 0.15];
pub const REVERB_PROB: f64 = 0.5;
pub const WIND_PROB: f64 = 0.05;
pub const SNR_RANGE_DB: (f64, f64) = (-5.0, 15.0);
pub const CLIP_MIN_QUANTILE: (f64, f64) = (0.0, 0.1);
pub const CLIP_MAX_QUANTILE: (f64, f64) = (0.9, 1.0);
pub const BANDWIDTH_LIMIT_HZ: f64 = 4000.0;
pub const CODEC_QSCALE: (f64, f64) = (-1.0, 10.0);
pub const PACKET_DURATION_S: f64 = 0.020;
pub const PACKET_LOSS_RATE: (f64, f64) = (0.05, 0.25);
pub const MAX_CONTINUOUS_LOSS: usize = 10;

/// Expected frequency of each extra distortion type: E[count] / 4.
pub fn expected_extra_marginal() -> f64 {
    let mean: f64 = EXTRA_COUNT_PROBS.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
    mean / DistortionKind::ALL.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionKind {
    Clipping,
    Bandwidth,
    Codec,
    PacketLoss,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 4] =
        [DistortionKind::Clipping, DistortionKind::Bandwidth, DistortionKind::Codec, DistortionKind::PacketLoss];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodecFormat {
    Mp3,
    Ogg,
}

impl CodecFormat {
    pub fn extension(self) -> &'static str {
        match self {
            CodecFormat::Mp3 => "mp3",
            CodecFormat::Ogg => "ogg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Distortion {
    Clipping { min_quantile: f64, max_quantile: f64 },
    Bandwidth { limit_hz: f64 },
    Codec { format: CodecFormat, qscale: f64 },
    PacketLoss { duration_s: f64, rate: f64, max_continuous: usize },
}

impl Distortion {
    pub fn kind(&self) -> DistortionKind {
        match self {
            Distortion::Clipping { .. } => DistortionKind::Clipping,
            Distortion::Bandwidth { .. } => DistortionKind::Bandwidth,
            Distortion::Codec { .. } => DistortionKind::Codec,
            Distortion::PacketLoss { .. } => DistortionKind::PacketLoss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub source: usize,
    pub snr_db: f64,
    pub is_wind: bool,
}

/// Everything needed to reproduce one degraded example from its clean utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationRecipe {
    pub reverb: Option<usize>,
    pub noise: Option<NoiseSpec>,
    /// Applied in order after reverb and noise.
    pub extra: Vec<Distortion>,
    /// Seeds noise cropping and packet placement.
    pub seed: u64,
}

impl DegradationRecipe {
    pub fn clean() -> Self {
        Self { reverb: None, noise: None, extra: Vec::new(), seed: 0 }
    }

    pub fn has_distinct_extras(&self) -> bool {
        let mut kinds: Vec<_> = self.extra.iter().map(|d| d.kind()).collect();
        kinds.sort();
        kinds.windows(2).all(|w| w[0] != w[1]) && self.extra.len() <= 3
    }
}

/// Sizes of the source banks a recipe may index into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BankSizes {
    pub noise: usize,
    pub wind: usize,
    pub rir: usize,
}

pub fn sample_recipe<R: Rng + ?Sized>(rng: &mut R, sizes: BankSizes) -> DegradationRecipe {
    let reverb_draw = rng.gen_bool(REVERB_PROB);
    let rir_index = rng.gen_range(0..sizes.rir.max(1));
    let reverb = (reverb_draw && sizes.rir > 0).then_some(rir_index);

    let wind_draw = rng.gen_bool(WIND_PROB);
    let is_wind = wind_draw && sizes.wind > 0;
    let bank = if is_wind { sizes.wind } else { sizes.noise };
    let source = rng.gen_range(0..bank.max(1));
    let snr_db = rng.gen_range(SNR_RANGE_DB.0..=SNR_RANGE_DB.1);
    let noise = (bank > 0).then_some(NoiseSpec { source, snr_db, is_wind });

    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut count = EXTRA_COUNT_PROBS.len() - 1;
    for (k, p) in EXTRA_COUNT_PROBS.iter().enumerate() {
        acc += p;
        if u < acc {
            count = k;
            break;
        }
    }
    let mut kinds = DistortionKind::ALL;
    kinds.shuffle(rng);
    let extra = kinds[..count]
        .iter()
        .map(|kind| match kind {
            DistortionKind::Clipping => Distortion::Clipping {
                min_quantile: rng.gen_range(CLIP_MIN_QUANTILE.0..=CLIP_MIN_QUANTILE.1),
                max_quantile: rng.gen_range(CLIP_MAX_QUANTILE.0..=CLIP_MAX_QUANTILE.1),
            },
            DistortionKind::Bandwidth => Distortion::Bandwidth { limit_hz: BANDWIDTH_LIMIT_HZ },
            DistortionKind::Codec => Distortion::Codec {
                format: if rng.gen_bool(0.5) { CodecFormat::Mp3 } else { CodecFormat::Ogg },
                qscale: rng.gen_range(CODEC_QSCALE.0..=CODEC_QSCALE.1),
            },
            DistortionKind::PacketLoss => Distortion::PacketLoss {
                duration_s: PACKET_DURATION_S,
                rate: rng.gen_range(PACKET_LOSS_RATE.0..=PACKET_LOSS_RATE.1),
                max_continuous: MAX_CONTINUOUS_LOSS,
            },
        })
        .collect();
    DegradationRecipe { reverb, noise, extra, seed: rng.gen() }
}

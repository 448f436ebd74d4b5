//! Packet-loss detection.
//!
//! The waveform is cut into non-overlapping packets of `P = rate * packet_duration`
//! samples; a packet is flagged lost when the fraction of its samples with
//! `|x| < amplitude_threshold` is at least `min_zero_ratio`. The trailing partial
//! packet is never flagged, matching the encoder, whose framing drops the same
//! tail.

use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PldConfig {
    pub packet_duration: f64,
    pub amplitude_threshold: f64,
    pub min_zero_ratio: f64,
}

impl Default for PldConfig {
    fn default() -> Self {
        Self { packet_duration: 0.020, amplitude_threshold: 1e-4, min_zero_ratio: 0.99 }
    }
}

impl PldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.packet_duration > 0.0
            && self.amplitude_threshold > 0.0
            && self.min_zero_ratio > 0.0
            && self.min_zero_ratio <= 1.0)
        {
            return Err(Error::Config(format!("invalid packet-loss detector config {self:?}")));
        }
        Ok(())
    }

    /// Packet length in samples at `rate`; errors unless it is a positive integer.
    pub fn packet_samples(&self, rate: u32) -> Result<usize> {
        packet_samples(rate, self.packet_duration)
    }
}

pub(crate) fn packet_samples(rate: u32, duration_s: f64) -> Result<usize> {
    let p = rate as f64 * duration_s;
    let r = p.round();
    if r < 1.0 || (p - r).abs() > 1e-9 * p.max(1.0) {
        return Err(Error::NonIntegerPacket { rate, duration_s });
    }
    Ok(r as usize)
}

/// Per-packet loss flags (`true` = lost).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketLossMask {
    pub flags: Vec<bool>,
    pub packet_samples: usize,
}

impl PacketLossMask {
    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn lost_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn loss_fraction(&self) -> f64 {
        if self.flags.is_empty() {
            0.0
        } else {
            self.lost_count() as f64 / self.flags.len() as f64
        }
    }

    pub fn longest_burst(&self) -> usize {
        mask_run_lengths(self).iter().map(|r| r.1).max().unwrap_or(0)
    }

    /// `0`/`1` string, one character per packet.
    pub fn to_bit_string(&self) -> String {
        self.flags.iter().map(|&f| if f { '1' } else { '0' }).collect()
    }

    pub fn as_f32(&self) -> Vec<f32> {
        self.flags.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect()
    }
}

pub fn detect(wave: &Waveform, cfg: &PldConfig) -> Result<PacketLossMask> {
    cfg.validate()?;
    let p = cfg.packet_samples(wave.rate())?;
    let flags = wave
        .samples()
        .chunks_exact(p)
        .map(|packet| {
            let silent = packet.iter().filter(|x| x.abs() < cfg.amplitude_threshold).count();
            silent as f64 / p as f64 >= cfg.min_zero_ratio
        })
        .collect();
    Ok(PacketLossMask { flags, packet_samples: p })
}

/// Maximal runs of lost packets as `(start, length)`, in order.
pub fn mask_run_lengths(mask: &PacketLossMask) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &f) in mask.flags.iter().enumerate() {
        match (f, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i - s));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, mask.flags.len() - s));
    }
    runs
}

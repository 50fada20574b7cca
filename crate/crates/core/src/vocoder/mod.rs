//! Vocoder analysis (F0, spectral envelope, band aperiodicity) and
//! pulse-plus-noise synthesis.
//!
//! All analysis is frame-synchronous: frame `t` is centered on sample
//! `t * hop` and a waveform of `n` samples has `ceil(n / hop)` frames.

mod aperiodicity;
mod envelope;
mod f0;
mod synthesis;

pub use aperiodicity::{band_index, estimate_band_ap, expand_band_ap};
pub use envelope::estimate_envelope;
pub use f0::{estimate_f0, estimate_f0_with_strength, pitch_strength_track};
pub use synthesis::{minimum_phase_spectrum, synthesize};

use crate::dsp::Waveform;
use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 50_000;
pub const HOP: usize = 250;
pub const NUM_AP_BANDS: usize = 5;
/// Floor applied to spectral envelopes so that logarithms stay finite.
pub const SPECTRAL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct VocoderConfig {
    pub sample_rate: u32,
    pub hop: usize,
    pub f0_min: f64,
    pub f0_max: f64,
    /// Minimum pitch strength for a frame to count as voiced.
    pub voicing_threshold: f64,
    /// FFT size of the envelope and of the synthesis filters.
    pub fft_size: usize,
    /// Edges of the aperiodicity bands in Hz (`NUM_AP_BANDS + 1` values).
    pub band_edges: [f64; NUM_AP_BANDS + 1],
    /// Seed of the synthesis noise source.
    pub noise_seed: u64,
}

impl Default for VocoderConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            hop: HOP,
            f0_min: 60.0,
            f0_max: 500.0,
            voicing_threshold: 0.3,
            fft_size: 4096,
            band_edges: [0.0, 3000.0, 6000.0, 9000.0, 12000.0, 15000.0],
            noise_seed: 0x5eed,
        }
    }
}

impl VocoderConfig {
    pub fn num_frames(&self, num_samples: usize) -> usize {
        num_samples.div_ceil(self.hop)
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(50.0..=600.0).contains(&self.f0_min)
            || !(50.0..=600.0).contains(&self.f0_max)
            || self.f0_min >= self.f0_max
        {
            return Err(Error::InvalidArgument(format!(
                "need 50 <= f0_min < f0_max <= 600, got {} and {}",
                self.f0_min, self.f0_max
            )));
        }
        if self.hop == 0 || !self.fft_size.is_power_of_two() {
            return Err(Error::InvalidArgument("hop must be positive and fft size a power of two".into()));
        }
        if (3.0 * self.sample_rate as f64 / self.f0_min) as usize > self.fft_size {
            return Err(Error::InvalidArgument(format!(
                "fft size {} too small for f0_min {}",
                self.fft_size, self.f0_min
            )));
        }
        Ok(())
    }

    pub(crate) fn check_rate(&self, w: &Waveform) -> Result<()> {
        if w.sample_rate() != self.sample_rate {
            return Err(Error::InvalidArgument(format!(
                "waveform is {} Hz, vocoder expects {} Hz",
                w.sample_rate(),
                self.sample_rate
            )));
        }
        Ok(())
    }
}

/// Fundamental frequency per frame; 0 marks an unvoiced frame.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Track {
    pub values: Vec<f64>,
    pub hop: usize,
    pub sample_rate: u32,
}

impl F0Track {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn vuv(&self) -> Vec<bool> {
        self.values.iter().map(|&f| f > 0.0).collect()
    }

    pub fn voiced_fraction(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().filter(|&&f| f > 0.0).count() as f64 / self.values.len() as f64
    }
}

/// Smooth per-frame power spectrum (one-sided, `fft_size / 2 + 1` bins).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEnvelope {
    pub frames: Vec<Vec<f64>>,
    pub fft_size: usize,
    pub sample_rate: u32,
}

impl SpectralEnvelope {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Per-band aperiodicity in `[0, 1]`, 1 meaning pure noise. Values are
/// amplitude ratios: the aperiodic share of the band power is `ap^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandAperiodicity {
    pub frames: Vec<[f64; NUM_AP_BANDS]>,
}

impl BandAperiodicity {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Full analysis of one waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub f0: F0Track,
    pub sp: SpectralEnvelope,
    pub ap: BandAperiodicity,
}

impl Analysis {
    pub fn num_frames(&self) -> usize {
        self.f0.len()
    }
}

pub fn analyze(w: &Waveform, cfg: &VocoderConfig) -> Result<Analysis> {
    let f0 = estimate_f0(w, cfg)?;
    let sp = estimate_envelope(w, &f0, cfg)?;
    let ap = estimate_band_ap(w, &f0, cfg)?;
    Ok(Analysis { f0, sp, ap })
}

pub(crate) fn check_track(w: &Waveform, f0: &F0Track, cfg: &VocoderConfig) -> Result<()> {
    cfg.check_rate(w)?;
    let expected = cfg.num_frames(w.len());
    if f0.len() != expected {
        return Err(Error::FrameCountMismatch {
            expected,
            actual: f0.len(),
        });
    }
    if f0.hop != cfg.hop {
        return Err(Error::InvalidArgument(format!(
            "f0 track hop {} != vocoder hop {}",
            f0.hop, cfg.hop
        )));
    }
    Ok(())
}

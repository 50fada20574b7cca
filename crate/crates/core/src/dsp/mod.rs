//! Deterministic signal primitives shared by the vocoder and the metrics:
//! framing, windows, FFT power spectra, mel filterbanks and resampling.

mod fft;
mod frame;
mod mel;
mod resample;
mod window;

pub use fft::{fft_power, parseval_energy, FftEngine};
pub use frame::{frame_signal, overlap_add, reflect_index, segment_at, PadMode};
pub use mel::{hz_to_mel, mel_matrix, mel_to_hz, MelFilterbank, MelInverse};
pub use resample::{resample, Resampler};
pub use window::{hann_periodic, hann_symmetric};

use crate::error::{Error, Result};

/// Mono audio at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    /// Builds a waveform, rejecting a zero sample rate or non-finite samples.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("waveform sample {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Scales the waveform so its peak magnitude equals `peak` (no-op on silence).
    pub fn normalize_peak(&mut self, peak: f64) {
        let max = self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        if max > 0.0 {
            let g = peak / max;
            self.samples.iter_mut().for_each(|s| *s *= g);
        }
    }
}

/// Frame-major power spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: Vec<Vec<f64>>,
    pub hop: usize,
    pub fft_size: usize,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Short-time power spectrogram with center reflection padding.
    pub fn compute(
        w: &Waveform,
        frame_len: usize,
        hop: usize,
        fft_size: usize,
        window: &[f64],
    ) -> Result<Self> {
        if window.len() != frame_len {
            return Err(Error::Shape(format!(
                "window length {} != frame length {frame_len}",
                window.len()
            )));
        }
        let mut engine = FftEngine::new(fft_size)?;
        let frames = frame_signal(w.samples(), frame_len, hop, PadMode::Center)?
            .into_iter()
            .map(|mut f| {
                f.iter_mut().zip(window).for_each(|(s, w)| *s *= w);
                engine.power(&f)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            frames,
            hop,
            fft_size,
            sample_rate: w.sample_rate(),
        })
    }
}

//! Pitch-adaptive spectral envelope: power spectrum under a `3 / F0` Hann
//! window, DC folding, rectangular smoothing over `2 F0 / 3` and cepstral
//! liftering (smoothing plus harmonic compensation).

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use super::{check_track, F0Track, SpectralEnvelope, VocoderConfig, SPECTRAL_FLOOR};
use crate::dsp::{hann_symmetric, segment_at, FftEngine, Waveform};
use crate::error::Result;

/// Window length for unvoiced frames (20 ms), expressed as the F0 whose
/// three periods span it.
const UNVOICED_WINDOW_SECS: f64 = 0.020;
const COMPENSATION_Q1: f64 = -0.15;

/// Linear interpolation of a one-sided spectrum at a fractional bin, using
/// even symmetry around DC and Nyquist.
fn interp_bin(p: &[f64], pos: f64) -> f64 {
    let last = (p.len() - 1) as f64;
    let mut x = pos.abs();
    if x > last {
        x = (2.0 * last - x).max(0.0);
    }
    let i = x.floor() as usize;
    let frac = x - i as f64;
    if i + 1 >= p.len() {
        p[p.len() - 1]
    } else {
        p[i] * (1.0 - frac) + p[i + 1] * frac
    }
}

/// Moving average over `width_bins` (fractional) with symmetric extension.
fn smooth_rectangular(p: &[f64], width_bins: f64) -> Vec<f64> {
    let n = p.len();
    let pad = width_bins.ceil() as usize + 2;
    // cumulative integral of the extended piecewise-constant spectrum,
    // index j covers bin (j - pad)
    let ext: Vec<f64> = (0..n + 2 * pad)
        .map(|j| interp_bin(p, j as f64 - pad as f64))
        .collect();
    let mut cum = vec![0.0; ext.len() + 1];
    for j in 0..ext.len() {
        cum[j + 1] = cum[j] + ext[j];
    }
    let integral = |x: f64| {
        // integral from the start of the extended array to position x,
        // where bin j occupies [j - 0.5, j + 0.5)
        let y = x + pad as f64 + 0.5;
        let i = (y.floor() as usize).min(ext.len() - 1);
        cum[i] + (y - i as f64) * ext[i]
    };
    let half = 0.5 * width_bins;
    (0..n)
        .map(|k| {
            let k = k as f64;
            (integral(k + half) - integral(k - half)) / width_bins
        })
        .collect()
}

pub(crate) struct EnvelopeEstimator {
    engine: FftEngine,
    buf: Vec<Complex64>,
    sample_rate: f64,
}

impl EnvelopeEstimator {
    pub(crate) fn new(fft_size: usize, sample_rate: u32) -> Result<Self> {
        Ok(Self {
            engine: FftEngine::new(fft_size)?,
            buf: vec![Complex64::default(); fft_size],
            sample_rate: sample_rate as f64,
        })
    }

    pub(crate) fn frame(&mut self, samples: &[f64], center: isize, f0: f64) -> Result<Vec<f64>> {
        let fs = self.sample_rate;
        let n = self.engine.size();
        let bins = n / 2 + 1;
        let f0 = if f0 > 0.0 { f0 } else { 3.0 / UNVOICED_WINDOW_SECS };
        let len = ((3.0 * fs / f0).round() as usize).min(n) | 1;
        let mut window = hann_symmetric(len);
        let norm = window.iter().map(|w| w * w).sum::<f64>().sqrt();
        window.iter_mut().for_each(|w| *w /= norm);
        let seg = segment_at(samples, center, len);
        let wsum: f64 = window.iter().sum();
        let mean = seg.iter().zip(&window).map(|(s, w)| s * w).sum::<f64>() / wsum;
        let frame: Vec<f64> = seg.iter().zip(&window).map(|(s, w)| (s - mean) * w).collect();
        let mut power = self.engine.power(&frame)?;
        if power.iter().all(|&v| v == 0.0) {
            return Ok(vec![SPECTRAL_FLOOR; bins]);
        }

        let bin_hz = fs / n as f64;
        let f0_bins = f0 / bin_hz;
        // fold energy below F0 across DC
        let original = power.clone();
        for (k, p) in power.iter_mut().enumerate() {
            let kf = k as f64;
            if kf < f0_bins {
                *p += interp_bin(&original, f0_bins - kf);
            }
        }
        let smoothed = smooth_rectangular(&power, 2.0 * f0_bins / 3.0);

        for k in 0..bins {
            let v = Complex64::new(smoothed[k].max(SPECTRAL_FLOOR).ln(), 0.0);
            self.buf[k] = v;
            if k > 0 && k < n - k {
                self.buf[n - k] = v;
            }
        }
        self.engine.inverse_in_place(&mut self.buf);
        // sinc smoothing times compensation, evaluated with rotating phasors
        let theta = PI * f0 / fs;
        let step = Complex64::from_polar(1.0, theta);
        let step2 = step * step;
        let mut rot = step;
        let mut rot2 = step2;
        for k in 1..bins {
            let x = theta * k as f64;
            let smoothing = rot.im / x;
            let compensation = (1.0 - 2.0 * COMPENSATION_Q1) + 2.0 * COMPENSATION_Q1 * rot2.re;
            let g = smoothing * compensation;
            self.buf[k] *= g;
            if k < n - k {
                self.buf[n - k] *= g;
            }
            rot *= step;
            rot2 *= step2;
        }
        self.engine.forward_in_place(&mut self.buf);
        Ok(self.buf[..bins]
            .iter()
            .map(|c| c.re.exp().max(SPECTRAL_FLOOR))
            .collect())
    }
}

pub fn estimate_envelope(w: &Waveform, f0: &F0Track, cfg: &VocoderConfig) -> Result<SpectralEnvelope> {
    cfg.validate()?;
    check_track(w, f0, cfg)?;
    let mut est = EnvelopeEstimator::new(cfg.fft_size, cfg.sample_rate)?;
    let frames = f0
        .values
        .iter()
        .enumerate()
        .map(|(t, &f)| est.frame(w.samples(), (t * cfg.hop) as isize, f))
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectralEnvelope {
        frames,
        fft_size: cfg.fft_size,
        sample_rate: cfg.sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothing_preserves_constants_and_mean() {
        let p = vec![3.0; 100];
        let s = smooth_rectangular(&p, 7.3);
        assert!(s.iter().all(|v| (v - 3.0).abs() < 1e-12));
        let ramp: Vec<f64> = (0..100).map(|k| k as f64).collect();
        let s = smooth_rectangular(&ramp, 4.0);
        for k in 10..90 {
            assert!((s[k] - k as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn silence_gives_floor() {
        let w = Waveform::zeros(5000, 50_000);
        let cfg = VocoderConfig::default();
        let f0 = F0Track { values: vec![0.0; 20], hop: 250, sample_rate: 50_000 };
        let sp = estimate_envelope(&w, &f0, &cfg).unwrap();
        assert_eq!(sp.len(), 20);
        assert!(sp.frames.iter().flatten().all(|&v| v == SPECTRAL_FLOOR));
    }

    #[test]
    fn mismatched_track_is_rejected() {
        let w = Waveform::zeros(5000, 50_000);
        let f0 = F0Track { values: vec![0.0; 19], hop: 250, sample_rate: 50_000 };
        assert!(matches!(
            estimate_envelope(&w, &f0, &VocoderConfig::default()),
            Err(crate::Error::FrameCountMismatch { expected: 20, actual: 19 })
        ));
    }
}

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Planned forward/inverse complex FFT of one size with reusable buffers.
pub struct FftEngine {
    size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl FftEngine {
    pub fn new(size: usize) -> Result<Self> {
        if !size.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "fft size {size} is not a power of two"
            )));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(size);
        let inverse = planner.plan_fft_inverse(size);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Ok(Self {
            size,
            forward,
            inverse,
            buf: vec![Complex64::default(); size],
            scratch: vec![Complex64::default(); scratch_len],
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn num_bins(&self) -> usize {
        self.size / 2 + 1
    }

    /// Full complex spectrum of a real frame, zero-padded to the FFT size.
    pub fn spectrum(&mut self, frame: &[f64]) -> Result<&[Complex64]> {
        if frame.len() > self.size {
            return Err(Error::InvalidArgument(format!(
                "frame length {} exceeds fft size {}",
                frame.len(),
                self.size
            )));
        }
        for (b, &x) in self.buf.iter_mut().zip(frame) {
            *b = Complex64::new(x, 0.0);
        }
        for b in &mut self.buf[frame.len()..] {
            *b = Complex64::default();
        }
        self.forward
            .process_with_scratch(&mut self.buf, &mut self.scratch);
        Ok(&self.buf)
    }

    /// One-sided power spectrum `|X_k|^2`, `k = 0..=size/2` (unnormalized).
    pub fn power(&mut self, frame: &[f64]) -> Result<Vec<f64>> {
        if let Some(i) = frame.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("fft input sample {i}")));
        }
        let bins = self.num_bins();
        let spec = self.spectrum(frame)?;
        Ok(spec[..bins].iter().map(|c| c.norm_sqr()).collect())
    }

    /// In-place forward transform of a complex buffer of the FFT size.
    pub fn forward_in_place(&mut self, data: &mut [Complex64]) {
        debug_assert_eq!(data.len(), self.size);
        self.forward.process_with_scratch(data, &mut self.scratch);
    }

    /// In-place inverse transform, scaled by `1/size`.
    pub fn inverse_in_place(&mut self, data: &mut [Complex64]) {
        debug_assert_eq!(data.len(), self.size);
        self.inverse.process_with_scratch(data, &mut self.scratch);
        let scale = 1.0 / self.size as f64;
        data.iter_mut().for_each(|c| *c *= scale);
    }
}

/// One-sided power spectrum of `frame` zero-padded to `fft_size`.
///
/// Values are `|X_k|^2` without normalization, so a unit impulse has a flat
/// spectrum of ones; use [`parseval_energy`] to recover the frame energy.
pub fn fft_power(frame: &[f64], fft_size: usize) -> Result<Vec<f64>> {
    FftEngine::new(fft_size)?.power(frame)
}

/// Time-domain energy implied by a one-sided power spectrum from
/// [`fft_power`] (interior bins count twice).
pub fn parseval_energy(power: &[f64], fft_size: usize) -> f64 {
    let last = fft_size / 2;
    let interior: f64 = power[1..last].iter().sum();
    (power[0] + 2.0 * interior + power[last]) / fft_size as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn zero_frame_gives_zero_spectrum() {
        let p = fft_power(&[0.0; 16], 16).unwrap();
        assert_eq!(p.len(), 9);
        assert!(p.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_is_flat() {
        let mut x = [0.0; 8];
        x[0] = 1.0;
        let p = fft_power(&x, 8).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn cosine_concentrates_in_its_bin() {
        // cos(2*pi*4n/64): closed form DFT is N/2 at bins 4 and 60, zero elsewhere.
        let x: Vec<f64> = (0..64).map(|n| (2.0 * PI * 4.0 * n as f64 / 64.0).cos()).collect();
        let p = fft_power(&x, 64).unwrap();
        let argmax = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        assert_eq!(argmax, 4);
        assert!((p[4] - 32.0f64.powi(2)).abs() < 1e-9);
        let rest: f64 = p.iter().enumerate().filter(|&(k, _)| k != 4).map(|(_, v)| v).sum();
        assert!(rest < 1e-18);
    }

    #[test]
    fn parseval_holds_for_windowed_noise() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let w = super::super::hann_periodic(300);
        let x: Vec<f64> = w.iter().map(|w| w * rng.random_range(-1.0..1.0)).collect();
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let p = fft_power(&x, 512).unwrap();
        assert!((parseval_energy(&p, 512) - energy).abs() / energy < 1e-6);
    }

    #[test]
    fn gain_scales_power_quadratically() {
        let x: Vec<f64> = (0..32).map(|n| ((n * n) as f64 * 0.37).sin()).collect();
        let a = 3.5;
        let xs: Vec<f64> = x.iter().map(|v| v * a).collect();
        let p = fft_power(&x, 32).unwrap();
        let ps = fft_power(&xs, 32).unwrap();
        for (u, v) in p.iter().zip(&ps) {
            assert!((v - a * a * u).abs() <= 1e-9 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn rejects_non_finite_and_bad_sizes() {
        assert!(matches!(fft_power(&[f64::NAN, 0.0], 4), Err(Error::NonFinite(_))));
        assert!(fft_power(&[0.0; 4], 6).is_err());
        assert!(fft_power(&[0.0; 9], 8).is_err());
    }
}

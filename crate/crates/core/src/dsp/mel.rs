use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank over the one-sided bins of an FFT.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    /// Row-major `[num_mels x num_bins]`.
    weights: Vec<f64>,
    /// Nonzero bin range of each row.
    support: Vec<(usize, usize)>,
    num_mels: usize,
    num_bins: usize,
    pub fft_size: usize,
    pub sample_rate: u32,
    pub f_low: f64,
    pub f_high: f64,
}

pub fn mel_matrix(
    num_mels: usize,
    fft_size: usize,
    sample_rate: u32,
    f_low: f64,
    f_high: f64,
) -> Result<MelFilterbank> {
    let nyquist = sample_rate as f64 / 2.0;
    if !(f_low >= 0.0 && f_low < f_high && f_high <= nyquist) {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= f_low < f_high <= {nyquist}, got [{f_low}, {f_high}]"
        )));
    }
    let num_bins = fft_size / 2 + 1;
    if num_mels == 0 || num_mels > num_bins {
        return Err(Error::InvalidArgument(format!(
            "{num_mels} mel filters requested for {num_bins} bins"
        )));
    }
    let (m_low, m_high) = (hz_to_mel(f_low), hz_to_mel(f_high));
    let edges: Vec<f64> = (0..num_mels + 2)
        .map(|i| mel_to_hz(m_low + (m_high - m_low) * i as f64 / (num_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / fft_size as f64;
    let mut weights = vec![0.0; num_mels * num_bins];
    for m in 0..num_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut weights[m * num_bins..(m + 1) * num_bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            *w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
        }
        if row.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "mel filter {m} covers no fft bin; use a larger fft size"
            )));
        }
    }
    let support = (0..num_mels)
        .map(|m| {
            let row = &weights[m * num_bins..(m + 1) * num_bins];
            let first = row.iter().position(|&w| w > 0.0).unwrap_or(0);
            let last = row.iter().rposition(|&w| w > 0.0).map_or(0, |i| i + 1);
            (first, last)
        })
        .collect();
    Ok(MelFilterbank {
        weights,
        support,
        num_mels,
        num_bins,
        fft_size,
        sample_rate,
        f_low,
        f_high,
    })
}

impl MelFilterbank {
    pub fn num_mels(&self) -> usize {
        self.num_mels
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.num_bins..(m + 1) * self.num_bins]
    }

    /// Mel band energies of a one-sided power spectrum.
    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        debug_assert_eq!(power.len(), self.num_bins);
        (0..self.num_mels)
            .map(|m| {
                let (a, b) = self.support[m];
                self.row(m)[a..b].iter().zip(&power[a..b]).map(|(w, p)| w * p).sum()
            })
            .collect()
    }

    /// Regularized right pseudo-inverse `W^T (W W^T + reg * I)^-1`, stored
    /// row-major `[num_bins x num_mels]`. `reg` is relative to the mean
    /// diagonal of `W W^T`.
    pub fn pseudo_inverse(&self, reg: f64) -> Result<MelInverse> {
        let w = DMatrix::from_row_slice(self.num_mels, self.num_bins, &self.weights);
        let mut gram = &w * w.transpose();
        let mean_diag = gram.trace() / self.num_mels as f64;
        for i in 0..self.num_mels {
            gram[(i, i)] += reg * mean_diag;
        }
        let inv = gram
            .try_inverse()
            .ok_or_else(|| Error::Numerical("mel gram matrix is singular".into()))?;
        let pinv = w.transpose() * inv;
        let mut data = Vec::with_capacity(self.num_bins * self.num_mels);
        for k in 0..self.num_bins {
            for m in 0..self.num_mels {
                data.push(pinv[(k, m)]);
            }
        }
        Ok(MelInverse {
            data,
            num_mels: self.num_mels,
            num_bins: self.num_bins,
        })
    }
}

/// Linear map from mel energies back to fft-bin power.
#[derive(Debug, Clone)]
pub struct MelInverse {
    data: Vec<f64>,
    num_mels: usize,
    num_bins: usize,
}

impl MelInverse {
    /// Expands mel energies to bins, clamping the result to at least `floor`.
    pub fn apply(&self, mel: &[f64], floor: f64) -> Vec<f64> {
        debug_assert_eq!(mel.len(), self.num_mels);
        (0..self.num_bins)
            .map(|k| {
                let row = &self.data[k * self.num_mels..(k + 1) * self.num_mels];
                row.iter().zip(mel).map(|(a, b)| a * b).sum::<f64>().max(floor)
            })
            .collect()
    }

    /// Expands a row-major `[frames x num_mels]` matrix in one product,
    /// returning `[frames x num_bins]` rows. Same result as [`Self::apply`]
    /// on each frame up to summation order.
    pub fn apply_frames(&self, mel: &[f64], floor: f64) -> Vec<Vec<f64>> {
        let frames = mel.len() / self.num_mels;
        debug_assert_eq!(frames * self.num_mels, mel.len());
        let mut out = vec![0.0; frames * self.num_bins];
        // out[f, k] = sum_m mel[f, m] * data[k, m]
        // SAFETY: the three buffers hold exactly frames x num_mels,
        // num_bins x num_mels and frames x num_bins values for these strides.
        unsafe {
            matrixmultiply::dgemm(
                frames,
                self.num_mels,
                self.num_bins,
                1.0,
                mel.as_ptr(),
                self.num_mels as isize,
                1,
                self.data.as_ptr(),
                1,
                self.num_mels as isize,
                0.0,
                out.as_mut_ptr(),
                self.num_bins as isize,
                1,
            );
        }
        out.chunks_exact(self.num_bins)
            .map(|r| r.iter().map(|v| v.max(floor)).collect())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixty_filters_at_50k() {
        let fb = mel_matrix(60, 4096, 50_000, 0.0, 25_000.0).unwrap();
        assert_eq!((fb.num_mels(), fb.num_bins()), (60, 2049));
        for m in 0..60 {
            let row = fb.row(m);
            assert!(row.iter().sum::<f64>() > 0.0);
            assert!(row.iter().all(|&w| w >= 0.0));
            // unimodal: non-decreasing up to the peak, non-increasing after
            let peak = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert!(row[..=peak].windows(2).all(|p| p[0] <= p[1]));
            assert!(row[peak..].windows(2).all(|p| p[0] >= p[1]));
        }
    }

    #[test]
    fn each_bin_feeds_at_most_two_filters() {
        for (mels, n, fs) in [(60, 4096, 50_000), (15, 512, 10_000), (40, 1024, 16_000)] {
            let fb = mel_matrix(mels, n, fs, 0.0, fs as f64 / 2.0).unwrap();
            for k in 0..fb.num_bins() {
                let active = (0..mels).filter(|&m| fb.row(m)[k] > 0.0).count();
                assert!(active <= 2);
            }
        }
    }

    #[test]
    fn mel_of_1000_hz_is_about_1000() {
        // 2595 * log10(1 + 1000/700) = 999.985...
        assert!((hz_to_mel(1000.0) - 999.985).abs() < 1e-2);
        assert!((mel_to_hz(hz_to_mel(3210.0)) - 3210.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(mel_matrix(60, 64, 50_000, 0.0, 25_000.0).is_err());
        assert!(mel_matrix(10, 512, 16_000, 100.0, 50.0).is_err());
        assert!(mel_matrix(10, 512, 16_000, 0.0, 9_000.0).is_err());
    }

    #[test]
    fn pseudo_inverse_recovers_flat_power_mid_band() {
        let fb = mel_matrix(60, 4096, 50_000, 0.0, 25_000.0).unwrap();
        let inv = fb.pseudo_inverse(1e-6).unwrap();
        let flat = vec![2.0; fb.num_bins()];
        let back = inv.apply(&fb.apply(&flat), 1e-12);
        for &v in &back[100..1900] {
            assert!((10.0 * (v / 2.0).log10()).abs() < 1.0, "{v}");
        }
    }
}

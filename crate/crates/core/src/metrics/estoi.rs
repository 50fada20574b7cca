use crate::dsp::{hann_symmetric, resample, FftEngine, Waveform};
use crate::error::{Error, Result};

/// Fixed parameters of the ESTOI measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstoiConfig {
    pub sample_rate: u32,
    pub frame_len: usize,
    pub fft_size: usize,
    pub num_bands: usize,
    pub min_center_hz: f64,
    /// Frames per short-time analysis segment.
    pub segment_len: usize,
    /// Frames more than this many dB below the loudest clean frame are dropped.
    pub dynamic_range_db: f64,
}

impl Default for EstoiConfig {
    fn default() -> Self {
        Self {
            sample_rate: 10_000,
            frame_len: 256,
            fft_size: 512,
            num_bands: 15,
            min_center_hz: 150.0,
            segment_len: 30,
            dynamic_range_db: 40.0,
        }
    }
}

impl EstoiConfig {
    fn hop(&self) -> usize {
        self.frame_len / 2
    }

    /// Rows of the one-third octave band matrix as `[start, end)` bin ranges.
    fn band_ranges(&self) -> Vec<(usize, usize)> {
        let bins = self.fft_size / 2 + 1;
        let bin_hz = self.sample_rate as f64 / self.fft_size as f64;
        let nearest = |f: f64| {
            (0..bins)
                .min_by(|&a, &b| {
                    let da = (a as f64 * bin_hz - f).abs();
                    let db = (b as f64 * bin_hz - f).abs();
                    da.total_cmp(&db)
                })
                .unwrap()
        };
        (0..self.num_bands)
            .map(|k| {
                let k = k as f64;
                let lo = self.min_center_hz * 2f64.powf((2.0 * k - 1.0) / 6.0);
                let hi = self.min_center_hz * 2f64.powf((2.0 * k + 1.0) / 6.0);
                (nearest(lo), nearest(hi))
            })
            .collect()
    }
}

fn frame_starts(len: usize, frame_len: usize, hop: usize) -> Vec<usize> {
    if len <= frame_len {
        return Vec::new();
    }
    (0..len - frame_len).step_by(hop).collect()
}

/// Drops frames of both signals where the clean frame is more than the
/// dynamic range below the loudest clean frame, then overlap-adds the rest.
fn remove_silent_frames(x: &[f64], y: &[f64], cfg: &EstoiConfig) -> (Vec<f64>, Vec<f64>) {
    let (n, hop) = (cfg.frame_len, cfg.hop());
    let window = hann_symmetric(n);
    let starts = frame_starts(x.len(), n, hop);
    let energy = |s: usize| {
        let e: f64 = x[s..s + n].iter().zip(&window).map(|(v, w)| (v * w).powi(2)).sum();
        20.0 * (e.sqrt() + f64::EPSILON).log10()
    };
    let energies: Vec<f64> = starts.iter().map(|&s| energy(s)).collect();
    let max = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts
        .iter()
        .zip(&energies)
        .filter(|(_, &e)| e > max - cfg.dynamic_range_db)
        .map(|(&s, _)| s)
        .collect();
    let out_len = if kept.is_empty() { 0 } else { (kept.len() - 1) * hop + n };
    let mut xo = vec![0.0; out_len];
    let mut yo = vec![0.0; out_len];
    for (i, &s) in kept.iter().enumerate() {
        let o = i * hop;
        for k in 0..n {
            xo[o + k] += x[s + k] * window[k];
            yo[o + k] += y[s + k] * window[k];
        }
    }
    (xo, yo)
}

/// One-third octave band envelopes, `[frames][bands]`.
fn band_envelopes(x: &[f64], cfg: &EstoiConfig, bands: &[(usize, usize)]) -> Result<Vec<Vec<f64>>> {
    let window = hann_symmetric(cfg.frame_len);
    let mut engine = FftEngine::new(cfg.fft_size)?;
    frame_starts(x.len(), cfg.frame_len, cfg.hop())
        .into_iter()
        .map(|s| {
            let frame: Vec<f64> = x[s..s + cfg.frame_len].iter().zip(&window).map(|(v, w)| v * w).collect();
            let p = engine.power(&frame)?;
            Ok(bands.iter().map(|&(lo, hi)| p[lo..hi].iter().sum::<f64>().sqrt()).collect())
        })
        .collect()
}

/// Subtracts the mean and scales to unit norm; zero vectors stay zero.
fn normalize(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Segment matrix normalized along time per band, then across bands per
/// frame. Returned frame-major: `[frame][band]`.
fn normalized_segment(env: &[Vec<f64>], end: usize, cfg: &EstoiConfig) -> Vec<Vec<f64>> {
    let (n, j) = (cfg.segment_len, cfg.num_bands);
    let start = end - n;
    let mut rows: Vec<Vec<f64>> = (0..j).map(|b| (start..end).map(|t| env[t][b]).collect()).collect();
    rows.iter_mut().for_each(|r| normalize(r));
    let mut cols: Vec<Vec<f64>> = (0..n).map(|t| (0..j).map(|b| rows[b][t]).collect()).collect();
    cols.iter_mut().for_each(|c| normalize(c));
    cols
}

/// Extended short-time objective intelligibility of `degraded` against
/// `clean`. Both are resampled to 10 kHz and trimmed to equal length; the
/// result lies in `[-1, 1]` (practically `[0, 1]`).
pub fn estoi(clean: &Waveform, degraded: &Waveform) -> Result<f64> {
    let cfg = EstoiConfig::default();
    let x = resample(clean, cfg.sample_rate)?;
    let y = resample(degraded, cfg.sample_rate)?;
    let len = x.len().min(y.len());
    let (x, y) = remove_silent_frames(&x.samples()[..len], &y.samples()[..len], &cfg);
    let bands = cfg.band_ranges();
    let xe = band_envelopes(&x, &cfg, &bands)?;
    let ye = band_envelopes(&y, &cfg, &bands)?;
    if xe.len() < cfg.segment_len {
        return Err(Error::InvalidArgument(format!(
            "{} non-silent frames, at least {} needed for one ESTOI segment",
            xe.len(),
            cfg.segment_len
        )));
    }
    let mut total = 0.0;
    let segments = xe.len() - cfg.segment_len + 1;
    for end in cfg.segment_len..=xe.len() {
        let xs = normalized_segment(&xe, end, &cfg);
        let ys = normalized_segment(&ye, end, &cfg);
        let d: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(a, b)| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>())
            .sum();
        total += d / cfg.segment_len as f64;
    }
    Ok(total / segments as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_layout_matches_third_octaves() {
        let bands = EstoiConfig::default().band_ranges();
        assert_eq!(bands.len(), 15);
        // first band spans 150 * 2^(-1/6) .. 150 * 2^(1/6) = 133.6 .. 168.4 Hz
        // at 19.53 Hz per bin -> bins 7 .. 9
        assert_eq!(bands[0], (7, 9));
        assert!(bands.windows(2).all(|w| w[0].1 == w[1].0));
    }

    #[test]
    fn too_short_is_rejected() {
        let w = Waveform::new((0..2000).map(|i| (i as f64 * 0.3).sin()).collect(), 10_000).unwrap();
        assert!(estoi(&w, &w).is_err());
    }
}

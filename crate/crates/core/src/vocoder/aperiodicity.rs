//! Band aperiodicity from the balance between inter-harmonic and total
//! power under a six-period window.

use super::{check_track, BandAperiodicity, F0Track, VocoderConfig, NUM_AP_BANDS};
use crate::dsp::{hann_symmetric, segment_at, FftEngine, Waveform};
use crate::error::Result;

const PERIODS_PER_WINDOW: f64 = 6.0;
/// Relative F0 search span used to lock the harmonic grid onto the spectrum.
const REFINE_SPAN: f64 = 0.02;
const REFINE_STEPS: usize = 41;
const REFINE_MAX_HZ: f64 = 3000.0;

/// Band containing `freq`, with everything above the top edge in the last band.
pub fn band_index(freq: f64, edges: &[f64; NUM_AP_BANDS + 1]) -> usize {
    (0..NUM_AP_BANDS)
        .find(|&b| freq < edges[b + 1])
        .unwrap_or(NUM_AP_BANDS - 1)
}

fn interp(p: &[f64], pos: f64) -> f64 {
    let i = pos.floor() as usize;
    if i + 1 >= p.len() {
        return p[p.len() - 1];
    }
    let frac = pos - i as f64;
    p[i] * (1.0 - frac) + p[i + 1] * frac
}

fn frame_ap(
    engine: &mut FftEngine,
    samples: &[f64],
    center: isize,
    f0: f64,
    fs: f64,
    edges: &[f64; NUM_AP_BANDS + 1],
) -> Result<[f64; NUM_AP_BANDS]> {
    let len = ((PERIODS_PER_WINDOW * fs / f0).round() as usize).min(engine.size() / 2) | 1;
    let window = hann_symmetric(len);
    let seg = segment_at(samples, center, len);
    let frame: Vec<f64> = seg.iter().zip(&window).map(|(s, w)| s * w).collect();
    let power = engine.power(&frame)?;
    let bin_hz = fs / engine.size() as f64;

    // Lock the harmonic grid: pick the F0 that maximizes low-band harmonic power.
    let mut best = (f0, f64::NEG_INFINITY);
    for i in 0..REFINE_STEPS {
        let c = 1.0 - REFINE_SPAN + 2.0 * REFINE_SPAN * i as f64 / (REFINE_STEPS - 1) as f64;
        let f = f0 * c;
        let n_harm = (REFINE_MAX_HZ / f).floor().max(1.0) as usize;
        let e: f64 = (1..=n_harm).map(|h| interp(&power, h as f64 * f / bin_hz)).sum();
        if e > best.1 {
            best = (f, e);
        }
    }
    let f0 = best.0;

    let mut on_off = [(0.0f64, 0usize, 0.0f64, 0usize); NUM_AP_BANDS];
    for (k, &p) in power.iter().enumerate().skip(1) {
        let f = k as f64 * bin_hz;
        if f < 0.5 * f0 || f >= edges[NUM_AP_BANDS] {
            continue;
        }
        let b = band_index(f, edges);
        let q = f / f0;
        let d = (q - q.round()).abs();
        let entry = &mut on_off[b];
        entry.0 += p;
        entry.1 += 1;
        if d > 1.0 / 3.0 {
            entry.2 += p;
            entry.3 += 1;
        }
    }
    let mut ap = [1.0; NUM_AP_BANDS];
    for (a, &(total, n_all, off, n_off)) in ap.iter_mut().zip(&on_off) {
        if total > 0.0 && n_all > 0 && n_off > 0 {
            let ratio = (off / n_off as f64) / (total / n_all as f64);
            *a = ratio.clamp(0.0, 1.0).sqrt();
        }
    }
    Ok(ap)
}

pub fn estimate_band_ap(w: &Waveform, f0: &F0Track, cfg: &VocoderConfig) -> Result<BandAperiodicity> {
    cfg.validate()?;
    check_track(w, f0, cfg)?;
    let fs = cfg.sample_rate as f64;
    let mut engines: Vec<(usize, FftEngine)> = Vec::new();
    let mut frames = Vec::with_capacity(f0.len());
    for (t, &f) in f0.values.iter().enumerate() {
        if f <= 0.0 {
            frames.push([1.0; NUM_AP_BANDS]);
            continue;
        }
        let len = (PERIODS_PER_WINDOW * fs / f).round() as usize;
        let size = (2 * len).next_power_of_two().max(1024);
        let idx = match engines.iter().position(|(s, _)| *s == size) {
            Some(i) => i,
            None => {
                engines.push((size, FftEngine::new(size)?));
                engines.len() - 1
            }
        };
        let engine = &mut engines[idx].1;
        frames.push(frame_ap(engine, w.samples(), (t * cfg.hop) as isize, f, fs, &cfg.band_edges)?);
    }
    Ok(BandAperiodicity { frames })
}

/// Expands band values to `num_bins` fft bins: piecewise linear between band
/// centers, constant below the first center and above the last.
pub fn expand_band_ap(
    bands: &[f64; NUM_AP_BANDS],
    edges: &[f64; NUM_AP_BANDS + 1],
    num_bins: usize,
    sample_rate: u32,
) -> Vec<f64> {
    let centers: Vec<f64> = (0..NUM_AP_BANDS).map(|b| 0.5 * (edges[b] + edges[b + 1])).collect();
    let bin_hz = sample_rate as f64 / (2 * (num_bins - 1)) as f64;
    (0..num_bins)
        .map(|k| {
            let f = k as f64 * bin_hz;
            if f <= centers[0] {
                return bands[0];
            }
            if f >= centers[NUM_AP_BANDS - 1] {
                return bands[NUM_AP_BANDS - 1];
            }
            let b = (0..NUM_AP_BANDS - 1).find(|&b| f < centers[b + 1]).unwrap();
            let r = (f - centers[b]) / (centers[b + 1] - centers[b]);
            bands[b] * (1.0 - r) + bands[b + 1] * r
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_lookup() {
        let edges = VocoderConfig::default().band_edges;
        assert_eq!(band_index(0.0, &edges), 0);
        assert_eq!(band_index(2999.0, &edges), 0);
        assert_eq!(band_index(3000.0, &edges), 1);
        assert_eq!(band_index(14_999.0, &edges), 4);
        assert_eq!(band_index(24_000.0, &edges), 4);
    }

    #[test]
    fn expansion_interpolates_between_centers() {
        let edges = VocoderConfig::default().band_edges;
        let ap = expand_band_ap(&[0.0, 1.0, 1.0, 1.0, 0.5], &edges, 2049, 50_000);
        assert_eq!(ap.len(), 2049);
        assert_eq!(ap[0], 0.0);
        // 3000 Hz is halfway between the 1.5 kHz and 4.5 kHz centers
        let k = (3000.0 / (50_000.0 / 4096.0)) as usize;
        assert!((ap[k] - 0.5).abs() < 0.01);
        assert_eq!(*ap.last().unwrap(), 0.5);
    }

    #[test]
    fn silence_is_fully_aperiodic() {
        let w = Waveform::zeros(10_000, 50_000);
        let f0 = F0Track { values: vec![120.0; 40], hop: 250, sample_rate: 50_000 };
        let ap = estimate_band_ap(&w, &f0, &VocoderConfig::default()).unwrap();
        assert!(ap.frames.iter().flatten().all(|&a| a == 1.0));
    }
}

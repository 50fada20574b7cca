//! Pitch estimation by sawtooth-kernel matching on square-root magnitude
//! spectra (in the spirit of SWIPE'), with a normalized-autocorrelation
//! check for borderline frames.
//!
//! For every candidate `f` a kernel with positive cosine lobes at the first
//! and prime harmonics and negative half-height lobes between them is
//! correlated against the spectrum; the window is `8 / f` long, realized by
//! interpolating between the two nearest power-of-two window sizes.

use super::{F0Track, VocoderConfig};
use crate::dsp::{hann_symmetric, resample, FftEngine, Waveform};
use crate::error::{Error, Result};
use crate::nn::Real;

const ANALYSIS_RATE: u32 = 10_000;
const CANDIDATES_PER_OCTAVE: f64 = 48.0;
const MAX_KERNEL_HZ: f64 = 4750.0;
const PERIODS_PER_WINDOW: f64 = 8.0;
const NACF_THRESHOLD: f64 = 0.85;

fn primes_up_to(n: usize) -> Vec<usize> {
    (2..=n).filter(|&k| (2..k).take_while(|d| d * d <= k).all(|d| k % d != 0)).collect()
}

/// One lobe of the kernel around harmonic `h`, as a function of `d = q - h`.
fn lobe(d: f64) -> f64 {
    let a = d.abs();
    if a < 0.25 {
        (2.0 * std::f64::consts::PI * d).cos()
    } else if a < 0.75 {
        0.5 * (2.0 * std::f64::consts::PI * d).cos()
    } else {
        0.0
    }
}

struct Kernel {
    candidate: usize,
    weight: f64,
    start: usize,
    values: Vec<f64>,
}

fn build_kernel(f: f64, bin_hz: f64, f_limit: f64) -> Option<(usize, Vec<f64>)> {
    let n_harm = ((f_limit / f) - 0.75).floor().max(1.0) as usize;
    let mut harmonics = vec![1usize];
    harmonics.extend(primes_up_to(n_harm));
    let start = ((0.25 * f / bin_hz).ceil() as usize).max(1);
    let end = ((n_harm as f64 + 0.75) * f / bin_hz).floor() as usize;
    if end <= start {
        return None;
    }
    let mut values: Vec<f64> = (start..=end)
        .map(|k| {
            let fk = k as f64 * bin_hz;
            let q = fk / f;
            let v: f64 = harmonics.iter().map(|&h| lobe(q - h as f64)).sum();
            v / fk.sqrt()
        })
        .collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter_mut().for_each(|v| *v -= mean);
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 0.0 {
        return None;
    }
    values.iter_mut().for_each(|v| *v /= norm);
    Some((start, values))
}

/// Analysis-rate segment of `len` samples centered at `center`, zero outside.
fn zero_padded_segment(x: &[f64], center: isize, len: usize) -> Vec<f64> {
    let start = center - (len / 2) as isize;
    (0..len as isize)
        .map(|k| {
            let i = start + k;
            if i >= 0 && (i as usize) < x.len() {
                x[i as usize]
            } else {
                0.0
            }
        })
        .collect()
}

fn nacf(x: &[f64], center: isize, lag: f64, rate: f64) -> f64 {
    let lag_i = lag.round() as isize;
    let len = ((3.0 * lag).max(0.025 * rate)) as isize;
    let start = center - len / 2 - lag_i / 2;
    let mut best = 0.0f64;
    for l in (lag_i - 1).max(1)..=lag_i + 1 {
        let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
        for n in start..start + len {
            let (a, b) = (n, n + l);
            if a < 0 || b as usize >= x.len() {
                continue;
            }
            let (u, v) = (x[a as usize], x[b as usize]);
            xy += u * v;
            xx += u * u;
            yy += v * v;
        }
        if xx > 0.0 && yy > 0.0 {
            best = best.max(xy / (xx * yy).sqrt());
        }
    }
    best
}

/// Per-frame pitch-strength curves over the log-spaced candidate grid.
struct StrengthMap {
    candidates: Vec<f64>,
    strength: Vec<Vec<f64>>,
    signal: Vec<f64>,
    rate: f64,
    centers: Vec<isize>,
}

fn strength_map(w: &Waveform, hop: usize, f0_min: f64, f0_max: f64) -> Result<StrengthMap> {
    let fs = w.sample_rate() as f64;
    let min_len = (PERIODS_PER_WINDOW * fs / f0_max).ceil() as usize;
    if w.len() < min_len {
        return Err(Error::InvalidArgument(format!(
            "waveform of {} samples is shorter than one analysis window ({min_len})",
            w.len()
        )));
    }
    let x = if w.sample_rate() > ANALYSIS_RATE {
        resample(w, ANALYSIS_RATE)?
    } else {
        w.clone()
    };
    let rate = x.sample_rate() as f64;
    let signal = x.into_samples();
    let num_frames = w.len().div_ceil(hop);
    let centers: Vec<isize> = (0..num_frames)
        .map(|t| (t as f64 * hop as f64 * rate / fs).round() as isize)
        .collect();

    let n_cand = (CANDIDATES_PER_OCTAVE * (f0_max / f0_min).log2()).floor() as usize + 1;
    let candidates: Vec<f64> = (0..n_cand)
        .map(|i| f0_min * 2f64.powf(i as f64 / CANDIDATES_PER_OCTAVE))
        .collect();
    let log_windows: Vec<f64> = candidates
        .iter()
        .map(|f| (PERIODS_PER_WINDOW * rate / f).log2())
        .collect();
    let p_lo = log_windows.iter().cloned().fold(f64::INFINITY, f64::min).floor() as u32;
    let p_hi = log_windows.iter().cloned().fold(0.0, f64::max).ceil() as u32;
    let f_limit = MAX_KERNEL_HZ.min(0.95 * rate / 2.0);

    let mut strength = vec![vec![0.0; n_cand]; num_frames];
    for p in p_lo..=p_hi {
        let nw = 1usize << p;
        let nfft = 2 * nw;
        let bin_hz = rate / nfft as f64;
        let kernels: Vec<Kernel> = candidates
            .iter()
            .zip(&log_windows)
            .enumerate()
            .filter_map(|(i, (&f, &lw))| {
                let weight = 1.0 - (lw - p as f64).abs();
                if weight <= 0.0 {
                    return None;
                }
                build_kernel(f, bin_hz, f_limit).map(|(start, values)| Kernel {
                    candidate: i,
                    weight,
                    start,
                    values,
                })
            })
            .collect();
        if kernels.is_empty() {
            continue;
        }
        let max_bin = kernels.iter().map(|k| k.start + k.values.len()).max().unwrap_or(0);
        let window = hann_symmetric(nw);
        let mut engine = FftEngine::new(nfft)?;
        let mut loud = vec![0.0; num_frames * max_bin];
        let mut cum_sq = vec![0.0; num_frames * (max_bin + 1)];
        for (t, &c) in centers.iter().enumerate() {
            let mut seg = zero_padded_segment(&signal, c, nw);
            seg.iter_mut().zip(&window).for_each(|(s, w)| *s *= w);
            let spec = engine.spectrum(&seg)?;
            let row = &mut loud[t * max_bin..(t + 1) * max_bin];
            for (k, l) in row.iter_mut().enumerate() {
                *l = spec[k].norm().sqrt();
            }
            let cum = &mut cum_sq[t * (max_bin + 1)..(t + 1) * (max_bin + 1)];
            for k in 0..max_bin {
                cum[k + 1] = cum[k] + row[k] * row[k];
            }
        }
        // all kernel-spectrum dot products as one product
        let mut kmat = vec![0.0; kernels.len() * max_bin];
        for (j, kern) in kernels.iter().enumerate() {
            kmat[j * max_bin + kern.start..j * max_bin + kern.start + kern.values.len()].copy_from_slice(&kern.values);
        }
        let mut dots = vec![0.0; kernels.len() * num_frames];
        f64::gemm(
            kernels.len(),
            max_bin,
            num_frames,
            1.0,
            &kmat,
            (max_bin as isize, 1),
            &loud,
            (1, max_bin as isize),
            0.0,
            &mut dots,
            (num_frames as isize, 1),
        );
        for (j, kern) in kernels.iter().enumerate() {
            let end = kern.start + kern.values.len();
            for (t, frame) in strength.iter_mut().enumerate() {
                let cum = &cum_sq[t * (max_bin + 1)..];
                let energy = cum[end] - cum[kern.start];
                if energy <= 1e-300 {
                    continue;
                }
                frame[kern.candidate] += kern.weight * dots[j * num_frames + t] / energy.sqrt();
            }
        }
    }
    Ok(StrengthMap {
        candidates,
        strength,
        signal,
        rate,
        centers,
    })
}

/// F0 track plus the per-frame peak pitch strength.
pub fn estimate_f0_with_strength(w: &Waveform, cfg: &VocoderConfig) -> Result<(F0Track, Vec<f64>)> {
    cfg.validate()?;
    let map = strength_map(w, cfg.hop, cfg.f0_min, cfg.f0_max)?;
    let step = 1.0 / CANDIDATES_PER_OCTAVE;
    let mut values = Vec::with_capacity(map.strength.len());
    let mut peaks = Vec::with_capacity(map.strength.len());
    for (row, &center) in map.strength.iter().zip(&map.centers) {
        let (best, &peak) = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("at least one candidate");
        let mut log_f = map.candidates[best].log2();
        if best > 0 && best + 1 < row.len() {
            let (a, b, c) = (row[best - 1], row[best], row[best + 1]);
            let denom = a - 2.0 * b + c;
            if denom < 0.0 {
                log_f += step * (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
            }
        }
        let f = 2f64.powf(log_f).clamp(cfg.f0_min, cfg.f0_max);
        let voiced = peak >= cfg.voicing_threshold
            || (peak >= 0.5 * cfg.voicing_threshold
                && nacf(&map.signal, center, map.rate / f, map.rate) >= NACF_THRESHOLD);
        values.push(if voiced { f } else { 0.0 });
        peaks.push(peak.max(0.0));
    }
    Ok((
        F0Track {
            values,
            hop: cfg.hop,
            sample_rate: w.sample_rate(),
        },
        peaks,
    ))
}

pub fn estimate_f0(w: &Waveform, cfg: &VocoderConfig) -> Result<F0Track> {
    Ok(estimate_f0_with_strength(w, cfg)?.0)
}

/// Peak pitch strength per frame over `[f0_min, f0_max]`; a periodicity
/// detector independent of any voicing threshold.
pub fn pitch_strength_track(w: &Waveform, hop: usize, f0_min: f64, f0_max: f64) -> Result<Vec<f64>> {
    let map = strength_map(w, hop, f0_min, f0_max)?;
    Ok(map
        .strength
        .iter()
        .map(|row| row.iter().cloned().fold(0.0, f64::max))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primes() {
        assert_eq!(primes_up_to(12), vec![2, 3, 5, 7, 11]);
        assert!(primes_up_to(1).is_empty());
    }

    #[test]
    fn kernel_is_zero_mean_unit_norm() {
        let (_, k) = build_kernel(150.0, 5.0, 4750.0).unwrap();
        assert!(k.iter().sum::<f64>().abs() < 1e-9);
        assert!((k.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn too_short_input_is_rejected() {
        let w = Waveform::zeros(100, 50_000);
        assert!(estimate_f0(&w, &VocoderConfig::default()).is_err());
    }

    #[test]
    fn silence_is_unvoiced() {
        let w = Waveform::zeros(25_000, 50_000);
        let f0 = estimate_f0(&w, &VocoderConfig::default()).unwrap();
        assert_eq!(f0.len(), 100);
        assert!(f0.values.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn bad_search_range_is_rejected() {
        let w = Waveform::zeros(25_000, 50_000);
        let cfg = VocoderConfig { f0_min: 40.0, ..Default::default() };
        assert!(estimate_f0(&w, &cfg).is_err());
        let cfg = VocoderConfig { f0_min: 300.0, f0_max: 200.0, ..Default::default() };
        assert!(estimate_f0(&w, &cfg).is_err());
    }
}

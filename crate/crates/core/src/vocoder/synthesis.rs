//! Pulse-plus-noise synthesis with per-frame minimum-phase filters.
//!
//! Voiced excitation places one pulse per period from a phase accumulator;
//! each pulse excites the periodic filter `sqrt(SP (1 - ap^2))` scaled by
//! `sqrt(T0)`. Aperiodic excitation is continuous white noise cut into
//! hop-length segments, each shaped by that frame's filter `sqrt(SP ap^2)`
//! (`sqrt(SP)` when unvoiced). Both paths therefore carry a per-sample
//! power equal to the envelope.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;

use super::{expand_band_ap, BandAperiodicity, F0Track, SpectralEnvelope, VocoderConfig, SPECTRAL_FLOOR};
use crate::dsp::{FftEngine, Waveform};
use crate::error::{Error, Result};

/// Minimum-phase spectrum (full length) whose magnitude on the one-sided
/// bins is `magnitude`, via cepstral folding.
pub fn minimum_phase_spectrum(engine: &mut FftEngine, magnitude: &[f64]) -> Vec<Complex64> {
    let n = engine.size();
    let bins = n / 2 + 1;
    debug_assert_eq!(magnitude.len(), bins);
    let mut buf = vec![Complex64::default(); n];
    for k in 0..bins {
        let v = Complex64::new(magnitude[k].max(1e-30).ln(), 0.0);
        buf[k] = v;
        if k > 0 && k < n - k {
            buf[n - k] = v;
        }
    }
    engine.inverse_in_place(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let re = c.re;
        *c = Complex64::new(
            match k {
                0 => re,
                k if k < n / 2 => 2.0 * re,
                k if k == n / 2 => re,
                _ => 0.0,
            },
            0.0,
        );
    }
    engine.forward_in_place(&mut buf);
    for k in 0..bins {
        buf[k] = buf[k].exp();
    }
    for k in bins..n {
        buf[k] = buf[n - k].conj();
    }
    buf
}

/// Splits the spectrum `x` of `a + i b` (both real) into the spectra of
/// `a` and `b` at bin `k`.
fn unpack(x: &[Complex64], k: usize) -> (Complex64, Complex64) {
    let n = x.len();
    let (u, v) = (x[k], x[(n - k) % n].conj());
    ((u + v) * 0.5, (u - v) * Complex64::new(0.0, -0.5))
}

/// [`minimum_phase_spectrum`] for two magnitudes at once, sharing each
/// transform between them.
pub fn minimum_phase_pair(engine: &mut FftEngine, a: &[f64], b: &[f64]) -> (Vec<Complex64>, Vec<Complex64>) {
    let n = engine.size();
    let bins = n / 2 + 1;
    debug_assert!(a.len() == bins && b.len() == bins);
    let mut buf = vec![Complex64::default(); n];
    for k in 0..bins {
        let v = Complex64::new(a[k].max(1e-30).ln(), b[k].max(1e-30).ln());
        buf[k] = v;
        if k > 0 && k < n - k {
            buf[n - k] = v;
        }
    }
    engine.inverse_in_place(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let w = match k {
            0 => 1.0,
            k if k < n / 2 => 2.0,
            k if k == n / 2 => 1.0,
            _ => 0.0,
        };
        *c = Complex64::new(w * c.re, w * c.im);
    }
    engine.forward_in_place(&mut buf);
    let mut ha = vec![Complex64::default(); n];
    let mut hb = vec![Complex64::default(); n];
    for k in 0..bins {
        let (ca, cb) = unpack(&buf, k);
        ha[k] = ca.exp();
        hb[k] = cb.exp();
    }
    for k in bins..n {
        ha[k] = ha[n - k].conj();
        hb[k] = hb[n - k].conj();
    }
    (ha, hb)
}

pub fn synthesize(
    sp: &SpectralEnvelope,
    ap: &BandAperiodicity,
    f0: &F0Track,
    vuv: &[bool],
    cfg: &VocoderConfig,
) -> Result<Waveform> {
    let num_frames = f0.len();
    for (name, n) in [("envelope", sp.len()), ("aperiodicity", ap.len()), ("vuv", vuv.len())] {
        if n != num_frames {
            return Err(Error::Shape(format!(
                "{name} has {n} frames, f0 track has {num_frames}"
            )));
        }
    }
    if sp.fft_size != cfg.fft_size || f0.hop != cfg.hop || sp.sample_rate != cfg.sample_rate {
        return Err(Error::InvalidArgument(
            "envelope/track geometry does not match the vocoder config".into(),
        ));
    }
    let n = cfg.fft_size;
    let bins = n / 2 + 1;
    let hop = cfg.hop;
    let fs = cfg.sample_rate as f64;
    let len = num_frames * hop;
    let mut out = vec![0.0; len + n];
    let mut engine = FftEngine::new(n)?;
    let voiced: Vec<bool> = vuv.iter().zip(&f0.values).map(|(&v, &f)| v && f > 0.0).collect();

    // per-frame filters
    let mut periodic: Vec<Option<Vec<f64>>> = Vec::with_capacity(num_frames);
    let mut aperiodic: Vec<Vec<Complex64>> = Vec::with_capacity(num_frames);
    for t in 0..num_frames {
        let env = &sp.frames[t];
        if env.len() != bins {
            return Err(Error::Shape(format!("envelope frame {t} has {} bins", env.len())));
        }
        if voiced[t] {
            let a = expand_band_ap(&ap.frames[t], &cfg.band_edges, bins, cfg.sample_rate);
            let per: Vec<f64> = env
                .iter()
                .zip(&a)
                .map(|(&s, &a)| (s.max(SPECTRAL_FLOOR) * (1.0 - a * a).max(0.0)).sqrt())
                .collect();
            let ape: Vec<f64> = env
                .iter()
                .zip(&a)
                .map(|(&s, &a)| (s.max(SPECTRAL_FLOOR) * a * a).sqrt())
                .collect();
            let (mut h, g) = minimum_phase_pair(&mut engine, &per, &ape);
            engine.inverse_in_place(&mut h);
            periodic.push(Some(h.iter().map(|c| c.re).collect()));
            aperiodic.push(g);
        } else {
            let ape: Vec<f64> = env.iter().map(|&s| s.max(SPECTRAL_FLOOR).sqrt()).collect();
            periodic.push(None);
            aperiodic.push(minimum_phase_spectrum(&mut engine, &ape));
        }
    }

    // voiced pulses
    let frame_of = |i: usize| ((i + hop / 2) / hop).min(num_frames - 1);
    let f0_at = |i: usize| -> f64 {
        let pos = i as f64 / hop as f64;
        let a = (pos.floor() as usize).min(num_frames - 1);
        let b = (a + 1).min(num_frames - 1);
        let (fa, fb) = (f0.values[a], f0.values[b]);
        match (voiced[a], voiced[b]) {
            (true, true) => fa + (fb - fa) * (pos - a as f64),
            (true, false) => fa,
            (false, true) => fb,
            (false, false) => 0.0,
        }
    };
    let mut phase: f64 = 1.0;
    for i in 0..len {
        let t = frame_of(i);
        if !voiced[t] {
            phase = 1.0;
            continue;
        }
        let f = f0_at(i);
        if f <= 0.0 {
            continue;
        }
        if phase >= 1.0 {
            phase -= phase.floor();
            let gain = (fs / f).sqrt();
            if let Some(h) = &periodic[t] {
                for (o, &v) in out[i..i + n].iter_mut().zip(h) {
                    *o += gain * v;
                }
            }
        }
        phase += f / fs;
    }

    // aperiodic noise, one segment per frame, two frames per transform
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise_seed);
    let mut buf = vec![Complex64::default(); n];
    let span = |t: usize| {
        let start = (t * hop).saturating_sub(hop / 2);
        let end = if t + 1 == num_frames { len } else { t * hop + hop / 2 };
        (start, end)
    };
    for t in (0..num_frames).step_by(2) {
        let second = t + 1 < num_frames;
        buf.iter_mut().for_each(|b| *b = Complex64::default());
        let (s0, e0) = span(t);
        for b in &mut buf[..e0 - s0] {
            b.re = StandardNormal.sample(&mut rng);
        }
        if second {
            let (s1, e1) = span(t + 1);
            for b in &mut buf[..e1 - s1] {
                b.im = StandardNormal.sample(&mut rng);
            }
        }
        engine.forward_in_place(&mut buf);
        let spectra = buf.clone();
        for (k, b) in buf.iter_mut().enumerate() {
            let (x0, x1) = unpack(&spectra, k);
            let y1 = if second { x1 * aperiodic[t + 1][k] } else { Complex64::default() };
            *b = x0 * aperiodic[t][k] + Complex64::new(-y1.im, y1.re);
        }
        engine.inverse_in_place(&mut buf);
        for (o, b) in out[s0..s0 + n].iter_mut().zip(&buf) {
            *o += b.re;
        }
        if second {
            let s1 = span(t + 1).0;
            for (o, b) in out[s1..s1 + n].iter_mut().zip(&buf) {
                *o += b.im;
            }
        }
    }
    out.truncate(len);
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("synthesis produced a non-finite sample at {i}")));
    }
    Waveform::new(out, cfg.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimum_phase_keeps_magnitude_and_is_causal_heavy() {
        let mut engine = FftEngine::new(512).unwrap();
        let mag: Vec<f64> = (0..257).map(|k| 1.0 + 0.8 * (k as f64 / 20.0).cos()).collect();
        let h = minimum_phase_spectrum(&mut engine, &mag);
        for k in 0..257 {
            assert!((h[k].norm() - mag[k]).abs() < 1e-6 * mag[k]);
        }
        let mut t = h.clone();
        engine.inverse_in_place(&mut t);
        let energy: f64 = t.iter().map(|c| c.re * c.re).sum();
        let early: f64 = t[..64].iter().map(|c| c.re * c.re).sum();
        assert!(early / energy > 0.99);
    }

    #[test]
    fn paired_minimum_phase_matches_single() {
        let mut engine = FftEngine::new(256).unwrap();
        let a: Vec<f64> = (0..129).map(|k| 1.0 + 0.5 * (k as f64 / 7.0).sin()).collect();
        let b: Vec<f64> = (0..129).map(|k| 0.2 + (k as f64 / 30.0).cos().abs()).collect();
        let (ha, hb) = minimum_phase_pair(&mut engine, &a, &b);
        let sa = minimum_phase_spectrum(&mut engine, &a);
        let sb = minimum_phase_spectrum(&mut engine, &b);
        for k in 0..256 {
            assert!((ha[k] - sa[k]).norm() < 1e-10);
            assert!((hb[k] - sb[k]).norm() < 1e-10);
        }
    }

    #[test]
    fn frame_count_mismatch_is_rejected() {
        let cfg = VocoderConfig::default();
        let sp = SpectralEnvelope { frames: vec![vec![1.0; 2049]; 3], fft_size: 4096, sample_rate: 50_000 };
        let ap = BandAperiodicity { frames: vec![[1.0; 5]; 3] };
        let f0 = F0Track { values: vec![0.0; 4], hop: 250, sample_rate: 50_000 };
        assert!(synthesize(&sp, &ap, &f0, &[false; 4], &cfg).is_err());
    }

    #[test]
    fn output_length_is_frames_times_hop() {
        let cfg = VocoderConfig::default();
        let sp = SpectralEnvelope { frames: vec![vec![1e-4; 2049]; 10], fft_size: 4096, sample_rate: 50_000 };
        let ap = BandAperiodicity { frames: vec![[0.2; 5]; 10] };
        let f0 = F0Track { values: vec![150.0; 10], hop: 250, sample_rate: 50_000 };
        let w = synthesize(&sp, &ap, &f0, &[true; 10], &cfg).unwrap();
        assert_eq!(w.len(), 2500);
    }
}

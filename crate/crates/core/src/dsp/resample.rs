use std::f64::consts::PI;

use super::Waveform;
use crate::error::{Error, Result};

/// Zero crossings of the interpolation kernel, counted at the lower of the
/// two sample rates.
const ZERO_CROSSINGS: usize = 64;
const KAISER_BETA: f64 = 8.0;
/// Cutoff relative to the lower Nyquist frequency; places the end of the
/// transition band at Nyquist for a 64-crossing Kaiser kernel.
const ROLLOFF: f64 = 0.91;

/// Rational-ratio windowed-sinc polyphase resampler.
#[derive(Debug, Clone)]
pub struct Resampler {
    up: usize,
    down: usize,
    /// Input-sample offsets covered by each phase's taps.
    first_tap: isize,
    taps_per_phase: usize,
    /// `[up x taps_per_phase]`, each row normalized to unit sum.
    table: Vec<f64>,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

impl Resampler {
    pub fn new(from_rate: u32, to_rate: u32) -> Result<Self> {
        if from_rate == 0 || to_rate == 0 {
            return Err(Error::InvalidArgument("sample rates must be positive".into()));
        }
        let g = gcd(from_rate as u64, to_rate as u64);
        let up = (to_rate as u64 / g) as usize;
        let down = (from_rate as u64 / g) as usize;
        // Kernel in units of input samples.
        let ratio = down as f64 / up as f64;
        let stretch = ratio.max(1.0);
        let half_width = (ZERO_CROSSINGS / 2) as f64 * stretch;
        let cutoff = 0.5 * ROLLOFF / stretch; // cycles per input sample
        let first_tap = -(half_width.ceil() as isize);
        let taps_per_phase = (2.0 * half_width.ceil()) as usize + 2;
        let i0_beta = bessel_i0(KAISER_BETA);
        let mut table = vec![0.0; up * taps_per_phase];
        for phase in 0..up {
            let frac = phase as f64 / up as f64;
            let row = &mut table[phase * taps_per_phase..(phase + 1) * taps_per_phase];
            for (j, h) in row.iter_mut().enumerate() {
                let tau = first_tap as f64 + j as f64 - frac;
                if tau.abs() >= half_width {
                    continue;
                }
                let arg = 2.0 * cutoff * tau;
                let sinc = if arg.abs() < 1e-12 { 1.0 } else { (PI * arg).sin() / (PI * arg) };
                let r = tau / half_width;
                let kaiser = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / i0_beta;
                *h = sinc * kaiser;
            }
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|h| *h /= sum);
        }
        Ok(Self {
            up,
            down,
            first_tap,
            taps_per_phase,
            table,
        })
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        ((input_len as u128 * self.up as u128 + self.down as u128 / 2) / self.down as u128) as usize
    }

    pub fn process(&self, input: &[f64]) -> Vec<f64> {
        if self.up == self.down {
            return input.to_vec();
        }
        let n = input.len();
        if n == 0 {
            return Vec::new();
        }
        let last = n as isize - 1;
        (0..self.output_len(n))
            .map(|i| {
                let num = i as u128 * self.down as u128;
                let base = (num / self.up as u128) as isize;
                let phase = (num % self.up as u128) as usize;
                let row = &self.table[phase * self.taps_per_phase..(phase + 1) * self.taps_per_phase];
                let start = base + self.first_tap;
                if start >= 0 && start + self.taps_per_phase as isize <= n as isize {
                    let s = start as usize;
                    row.iter().zip(&input[s..s + self.taps_per_phase]).map(|(h, x)| h * x).sum()
                } else {
                    row.iter()
                        .enumerate()
                        .map(|(j, h)| h * input[(start + j as isize).clamp(0, last) as usize])
                        .sum()
                }
            })
            .collect()
    }
}

/// Resamples to `target_rate`; same-rate input is returned unchanged.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::InvalidArgument("target rate must be positive".into()));
    }
    if target_rate == w.sample_rate() {
        return Ok(w.clone());
    }
    let r = Resampler::new(w.sample_rate(), target_rate)?;
    Waveform::new(r.process(w.samples()), target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, secs: f64) -> Waveform {
        let n = (rate as f64 * secs) as usize;
        Waveform::new(
            (0..n).map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin()).collect(),
            rate,
        )
        .unwrap()
    }

    #[test]
    fn downsampled_sine_matches_analytic() {
        let out = resample(&sine(1000.0, 50_000, 0.5), 10_000).unwrap();
        let reference = sine(1000.0, 10_000, 0.5);
        assert_eq!(out.len(), reference.len());
        // skip edges where the kernel runs off the signal
        let (a, b) = (&out.samples()[200..4800], &reference.samples()[200..4800]);
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(dot / (na * nb) >= 0.999);
    }

    #[test]
    fn content_above_new_nyquist_is_rejected() {
        let input = sine(7000.0, 50_000, 0.5);
        let out = resample(&input, 10_000).unwrap();
        let p_in: f64 = input.samples().iter().map(|x| x * x).sum::<f64>() / input.len() as f64;
        let mid = &out.samples()[200..out.len() - 200];
        let p_out: f64 = mid.iter().map(|x| x * x).sum::<f64>() / mid.len() as f64;
        assert!(10.0 * (p_out / p_in).log10() <= -60.0);
    }

    #[test]
    fn same_rate_is_identity() {
        let w = sine(123.0, 16_000, 0.1);
        let out = resample(&w, 16_000).unwrap();
        for (a, b) in w.samples().iter().zip(out.samples()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn dc_is_preserved() {
        for (from, to) in [(50_000, 10_000), (10_000, 50_000), (44_100, 50_000), (16_000, 10_000)] {
            let w = Waveform::new(vec![0.25; 4000], from).unwrap();
            let out = resample(&w, to).unwrap();
            assert!(out.samples().iter().all(|x| (x - 0.25).abs() < 1e-12), "{from}->{to}");
        }
    }

    #[test]
    fn duration_preserved_within_a_sample() {
        for (from, to, n) in [(50_000, 10_000, 150_001), (44_100, 50_000, 12_345), (8_000, 50_000, 999)] {
            let w = Waveform::zeros(n, from);
            let out = resample(&w, to).unwrap();
            assert!((out.duration_secs() - w.duration_secs()).abs() <= 1.0 / to as f64);
        }
    }
}

//! Deterministic speech-like test material: GRID-grammar sentences rendered
//! by a small formant synthesizer, with a matching talking-mouth video.
//!
//! The audio is not meant to be intelligible speech. It has the properties
//! the pipeline cares about: voiced stretches with a moving F0 and formant
//! structure, fricative and burst noise, pauses, and a mouth opening that
//! follows the acoustic energy.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dsp::Waveform;
use crate::vocoder::{HOP, SAMPLE_RATE};

pub const CLIP_SECONDS: f64 = 3.0;
pub const VIDEO_FPS: usize = 25;
pub const VIDEO_FRAMES: usize = 75;

const COMMANDS: [&str; 4] = ["bin", "lay", "place", "set"];
const COLORS: [&str; 4] = ["blue", "green", "red", "white"];
const PREPOSITIONS: [&str; 4] = ["at", "by", "in", "with"];
const DIGITS: [&str; 10] = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"];
const ADVERBS: [&str; 4] = ["again", "now", "please", "soon"];

/// A random GRID-grammar sentence: command color preposition letter digit adverb.
pub fn grid_sentence<R: Rng>(rng: &mut R) -> String {
    let letters: Vec<char> = ('a'..='z').filter(|&c| c != 'w').collect();
    let letter = letters[rng.random_range(0..letters.len())].to_string();
    [
        COMMANDS[rng.random_range(0..COMMANDS.len())],
        COLORS[rng.random_range(0..COLORS.len())],
        PREPOSITIONS[rng.random_range(0..PREPOSITIONS.len())],
        letter.as_str(),
        DIGITS[rng.random_range(0..DIGITS.len())],
        ADVERBS[rng.random_range(0..ADVERBS.len())],
    ]
    .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phone {
    Vowel([f64; 3]),
    Sonorant([f64; 3]),
    Fricative { center: f64, bandwidth: f64, voiced: bool },
    Stop,
    Pause,
}

fn phone_of(c: char) -> Phone {
    match c {
        'a' => Phone::Vowel([730.0, 1090.0, 2440.0]),
        'e' => Phone::Vowel([530.0, 1840.0, 2480.0]),
        'i' | 'y' => Phone::Vowel([300.0, 2250.0, 3000.0]),
        'o' => Phone::Vowel([570.0, 840.0, 2410.0]),
        'u' => Phone::Vowel([320.0, 900.0, 2240.0]),
        'm' | 'n' => Phone::Sonorant([280.0, 1300.0, 2500.0]),
        'l' => Phone::Sonorant([360.0, 1300.0, 2700.0]),
        'r' => Phone::Sonorant([420.0, 1300.0, 1700.0]),
        'w' => Phone::Sonorant([300.0, 700.0, 2200.0]),
        'j' => Phone::Sonorant([280.0, 2200.0, 3000.0]),
        's' | 'c' | 'x' => Phone::Fricative { center: 6000.0, bandwidth: 2500.0, voiced: false },
        'z' => Phone::Fricative { center: 5500.0, bandwidth: 2500.0, voiced: true },
        'f' | 'h' => Phone::Fricative { center: 2500.0, bandwidth: 5000.0, voiced: false },
        'v' => Phone::Fricative { center: 2500.0, bandwidth: 5000.0, voiced: true },
        _ => Phone::Stop,
    }
}

fn duration_of(p: Phone) -> f64 {
    match p {
        Phone::Vowel(_) => 0.110,
        Phone::Sonorant(_) => 0.065,
        Phone::Fricative { .. } => 0.085,
        Phone::Stop => 0.055,
        Phone::Pause => 0.050,
    }
}

struct Segment {
    phone: Phone,
    start: f64,
    end: f64,
}

/// Klatt two-pole resonator with unit DC gain.
#[derive(Default)]
struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn step(&mut self, x: f64, freq: f64, bw: f64, fs: f64) -> f64 {
        let r = (-PI * bw / fs).exp();
        let c = -r * r;
        let b = 2.0 * r * (2.0 * PI * freq / fs).cos();
        let a = 1.0 - b - c;
        let y = a * x + b * self.y1 + c * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn poly_blep(t: f64, dt: f64) -> f64 {
    if t < dt {
        let t = t / dt;
        t + t - t * t - 1.0
    } else if t > 1.0 - dt {
        let t = (t - 1.0) / dt;
        t * t + t + t + 1.0
    } else {
        0.0
    }
}

/// One synthetic utterance with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticUtterance {
    pub audio: Waveform,
    pub transcript: String,
    /// Source F0 per vocoder frame (0 where the source is not voiced).
    pub f0: Vec<f64>,
    /// Mouth opening in `[0, 1]` per video frame.
    pub openness: Vec<f64>,
    /// Mouth spread (front vowels wide) in `[0, 1]` per video frame.
    pub spread: Vec<f64>,
}

pub fn synthetic_utterance(seed: u64) -> SyntheticUtterance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transcript = grid_sentence(&mut rng);
    let fs = SAMPLE_RATE as f64;
    let n = (CLIP_SECONDS * fs) as usize;

    // phone timeline, stretched to fill the clip between lead-in and tail
    let mut phones = Vec::new();
    for (i, word) in transcript.split(' ').enumerate() {
        if i > 0 {
            phones.push(Phone::Pause);
        }
        phones.extend(word.chars().map(phone_of));
    }
    let lead = 0.20 + 0.1 * rng.random::<f64>();
    let tail = 0.20 + 0.1 * rng.random::<f64>();
    let natural: f64 = phones.iter().map(|&p| duration_of(p)).sum();
    let scale = (CLIP_SECONDS - lead - tail) / natural;
    let mut segments = Vec::with_capacity(phones.len());
    let mut t = lead;
    for &p in &phones {
        let d = duration_of(p) * scale * (0.8 + 0.4 * rng.random::<f64>());
        segments.push(Segment { phone: p, start: t, end: t + d });
        t += d;
    }
    let stretch = (CLIP_SECONDS - tail - lead) / (t - lead);
    for s in &mut segments {
        s.start = lead + (s.start - lead) * stretch;
        s.end = lead + (s.end - lead) * stretch;
    }

    let base_f0 = 95.0 + 120.0 * rng.random::<f64>();
    let accent: Vec<f64> = (0..6).map(|_| 0.9 + 0.25 * rng.random::<f64>()).collect();

    let mut out = vec![0.0; n];
    let mut amp_env = vec![0.0; n];
    let mut f0_per_sample = vec![0.0; n];
    let mut spread_per_sample = vec![0.0; n];
    let mut formants = [500.0, 1500.0, 2500.0];
    let mut voice_amp = 0.0;
    let mut noise_amp = 0.0;
    let mut phase = 0.0;
    let mut resonators: [Resonator; 4] = Default::default();
    let mut noise_res = Resonator::default();
    let mut noise_res2 = Resonator::default();
    let mut seg_idx = 0usize;
    let mut word = 0usize;
    let smooth = (-1.0 / (0.008 * fs)).exp();
    let glide = (-1.0 / (0.020 * fs)).exp();
    for i in 0..n {
        let time = i as f64 / fs;
        while seg_idx < segments.len() && time >= segments[seg_idx].end {
            if segments[seg_idx].phone == Phone::Pause {
                word += 1;
            }
            seg_idx += 1;
        }
        let seg = segments
            .get(seg_idx)
            .filter(|s| time >= s.start)
            .map(|s| (s.phone, (time - s.start) / (s.end - s.start)));
        let (v_target, n_target, f_target, noise_shape) = match seg {
            Some((Phone::Vowel(f), _)) => (1.0, 0.02, Some(f), None),
            Some((Phone::Sonorant(f), _)) => (0.45, 0.01, Some(f), None),
            Some((Phone::Fricative { center, bandwidth, voiced }, _)) => {
                (if voiced { 0.25 } else { 0.0 }, 0.35, None, Some((center, bandwidth)))
            }
            Some((Phone::Stop, pos)) if pos > 0.7 => (0.0, 0.6, None, Some((3000.0, 3000.0))),
            _ => (0.0, 0.0, None, None),
        };
        voice_amp = smooth * voice_amp + (1.0 - smooth) * v_target;
        noise_amp = smooth * noise_amp + (1.0 - smooth) * n_target;
        if let Some(f) = f_target {
            for (cur, tgt) in formants.iter_mut().zip(f) {
                *cur = glide * *cur + (1.0 - glide) * tgt;
            }
        }
        let progress = time / CLIP_SECONDS;
        let f0 = base_f0 * (1.1 - 0.2 * progress) * accent[word.min(5)]
            * (1.0 + 0.02 * (2.0 * PI * 5.0 * time).sin());
        let dt = f0 / fs;
        phase += dt;
        if phase >= 1.0 {
            phase -= 1.0;
        }
        let saw = (2.0 * phase - 1.0) - poly_blep(phase, dt);
        let mut v = -saw * voice_amp;
        for (k, res) in resonators.iter_mut().enumerate() {
            let (freq, bw) = match k {
                0 => (formants[0], 80.0),
                1 => (formants[1], 110.0),
                2 => (formants[2], 160.0),
                _ => (3600.0, 250.0),
            };
            v = res.step(v, freq, bw, fs);
        }
        let white: f64 = StandardNormal.sample(&mut rng);
        let (nc, nb) = noise_shape.unwrap_or((3000.0, 4000.0));
        let shaped = noise_res2.step(noise_res.step(white, nc, nb, fs), nc, nb, fs);
        out[i] = 0.6 * v + noise_amp * 0.5 * shaped + 1e-4 * white;
        amp_env[i] = voice_amp + 0.5 * noise_amp;
        f0_per_sample[i] = if voice_amp > 0.2 { f0 } else { 0.0 };
        spread_per_sample[i] = ((formants[1] - 800.0) / 1500.0).clamp(0.0, 1.0);
    }
    let max = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    out.iter_mut().for_each(|v| *v *= 0.5 / max);

    let f0: Vec<f64> = (0..n.div_ceil(HOP)).map(|t| f0_per_sample[(t * HOP).min(n - 1)]).collect();
    let per_video = n / VIDEO_FRAMES;
    let mean = |v: &[f64], k: usize| v[k * per_video..(k + 1) * per_video].iter().sum::<f64>() / per_video as f64;
    let openness = (0..VIDEO_FRAMES).map(|k| mean(&amp_env, k).clamp(0.0, 1.0)).collect();
    let spread = (0..VIDEO_FRAMES).map(|k| mean(&spread_per_sample, k)).collect();

    SyntheticUtterance {
        audio: Waveform::new(out, SAMPLE_RATE).expect("finite synthesis"),
        transcript,
        f0,
        openness,
        spread,
    }
}

/// Sawtooth at `f0` Hz, naive (not band-limited), amplitude `amp`.
pub fn sawtooth(f0: f64, secs: f64, sample_rate: u32, amp: f64) -> Waveform {
    let n = (secs * sample_rate as f64).round() as usize;
    Waveform::new(
        (0..n)
            .map(|i| {
                let p = (i as f64 * f0 / sample_rate as f64).fract();
                amp * (2.0 * p - 1.0)
            })
            .collect(),
        sample_rate,
    )
    .expect("finite")
}

/// Seeded Gaussian white noise with standard deviation `std`.
pub fn white_noise(len: usize, sample_rate: u32, std: f64, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Waveform::new(
        (0..len).map(|_| { let g: f64 = StandardNormal.sample(&mut rng); std * g }).collect::<Vec<f64>>(),
        sample_rate,
    )
    .expect("finite")
}

/// Renders the talking-mouth video for an utterance as `[T, 3, H, W]`
/// values in `[-1, 1]`. `bottom_half` crops to the lower half of an
/// `2H x W` face-sized frame, like the mouth-region input.
pub fn render_video(u: &SyntheticUtterance, height: usize, width: usize, bottom_half: bool, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let skin = [0.55 + 0.3 * rng.random::<f64>(), 0.35 + 0.2 * rng.random::<f64>(), 0.25 + 0.2 * rng.random::<f64>()];
    let full_h = if bottom_half { 2 * height } else { height };
    let row_offset = if bottom_half { height } else { 0 };
    let mut data = Vec::with_capacity(VIDEO_FRAMES * 3 * height * width);
    let (cy, cx) = (0.72 * full_h as f64, 0.5 * width as f64);
    for k in 0..VIDEO_FRAMES {
        let open = u.openness[k];
        let spread = u.spread[k];
        let ry = (0.02 + 0.10 * open) * full_h as f64;
        let rx = (0.18 + 0.08 * spread) * width as f64;
        let jitter = 0.01 * width as f64 * (k as f64 * 0.7).sin();
        for c in 0..3 {
            for y in 0..height {
                for x in 0..width {
                    let yy = (y + row_offset) as f64 + 0.5;
                    let xx = x as f64 + 0.5;
                    let dy = (yy - cy) / ry.max(0.5);
                    let dx = (xx - cx - jitter) / rx;
                    let r2 = dx * dx + dy * dy;
                    let lip = (dx * dx + ((yy - cy) / (ry + 0.05 * full_h as f64)).powi(2)) < 1.0;
                    let shade = 1.0 - 0.3 * (yy / full_h as f64);
                    let v = if r2 < 1.0 {
                        0.05
                    } else if lip {
                        [0.75, 0.25, 0.3][c]
                    } else {
                        skin[c] * shade
                    };
                    data.push((2.0 * v - 1.0) as f32);
                }
            }
        }
    }
    data
}

//! Conversion between raw vocoder parameters and the normalized targets the
//! network regresses: 60 log-mel SP coefficients, 5 inverted AP
//! coefficients, log F0 and the voicing flag, all min-max scaled to [0, 1].

pub(crate) mod io;

pub use io::{read_stats, read_voc1, write_stats, write_voc1, STATS_MAGIC, VOC1_MAGIC};

use sha2::{Digest, Sha256};

use crate::dsp::{mel_matrix, MelFilterbank, MelInverse};
use crate::error::{Error, Result};
use crate::vocoder::{
    Analysis, BandAperiodicity, F0Track, SpectralEnvelope, VocoderConfig, NUM_AP_BANDS, SPECTRAL_FLOOR,
};

pub const NUM_MELS: usize = 60;
/// Audio frames per video frame.
pub const BLOCK_LEN: usize = 8;
/// Coefficients covered by the normalization statistics: SP, AP, F0.
pub const NUM_COEFFS: usize = NUM_MELS + NUM_AP_BANDS + 1;
const F0_INDEX: usize = NUM_MELS + NUM_AP_BANDS;
/// Normalized values may overshoot [0, 1] by this much before they count
/// as out of range.
pub const RANGE_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub vocoder: VocoderConfig,
    pub num_mels: usize,
    pub mel_f_low: f64,
    pub mel_f_high: f64,
    /// Ridge term of the mel pseudo-inverse, relative to the mean diagonal
    /// of the filterbank Gram matrix.
    pub mel_regularization: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        let vocoder = VocoderConfig::default();
        let mel_f_high = vocoder.sample_rate as f64 / 2.0;
        Self {
            vocoder,
            num_mels: NUM_MELS,
            mel_f_low: 0.0,
            mel_f_high,
            mel_regularization: 1e-3,
        }
    }
}

impl FeatureConfig {
    /// First 16 bytes of SHA-256 over the settings that determine what a
    /// normalized coefficient means.
    pub fn fingerprint(&self) -> [u8; 16] {
        let v = &self.vocoder;
        let desc = format!(
            "mel={},{},{},{},{};bands={:?};hop={};fs={}",
            self.num_mels, v.fft_size, v.sample_rate, self.mel_f_low, self.mel_f_high, v.band_edges, v.hop, v.sample_rate
        );
        let digest = Sha256::digest(desc.as_bytes());
        let mut out = [0u8; 16];
        out.copy_from_slice(&digest[..16]);
        out
    }
}

/// Per-coefficient extrema over a training corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub min: [f64; NUM_COEFFS],
    pub max: [f64; NUM_COEFFS],
    pub fingerprint: [u8; 16],
}

impl NormalizationStats {
    fn normalize(&self, i: usize, v: f64) -> f64 {
        (v - self.min[i]) / (self.max[i] - self.min[i])
    }

    fn denormalize(&self, i: usize, v: f64) -> f64 {
        self.min[i] + v * (self.max[i] - self.min[i])
    }
}

/// Unnormalized per-frame coefficients: log mel energies, band AP, and
/// log F0 (`None` on unvoiced frames).
#[derive(Debug, Clone, PartialEq)]
pub struct RawFeatures {
    pub log_mel: Vec<[f64; NUM_MELS]>,
    pub ap: Vec<[f64; NUM_AP_BANDS]>,
    pub log_f0: Vec<Option<f64>>,
}

impl RawFeatures {
    pub fn len(&self) -> usize {
        self.log_f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_f0.is_empty()
    }
}

/// Normalized features of one clip, frame-major (`se[t * 60 + m]`).
#[derive(Debug, Clone, PartialEq)]
pub struct VocoderFeatureBlock {
    pub se: Vec<f64>,
    pub nap: Vec<f64>,
    pub f0: Vec<f64>,
    pub vuv: Vec<f64>,
}

impl VocoderFeatureBlock {
    pub fn zeros(frames: usize) -> Self {
        Self {
            se: vec![0.0; frames * NUM_MELS],
            nap: vec![0.0; frames * NUM_AP_BANDS],
            f0: vec![0.0; frames],
            vuv: vec![0.0; frames],
        }
    }

    pub fn num_frames(&self) -> usize {
        self.f0.len()
    }

    pub fn se_frame(&self, t: usize) -> &[f64] {
        &self.se[t * NUM_MELS..(t + 1) * NUM_MELS]
    }

    pub fn nap_frame(&self, t: usize) -> &[f64] {
        &self.nap[t * NUM_AP_BANDS..(t + 1) * NUM_AP_BANDS]
    }

    pub(crate) fn check_shape(&self) -> Result<()> {
        let a = self.f0.len();
        if self.se.len() != a * NUM_MELS || self.nap.len() != a * NUM_AP_BANDS || self.vuv.len() != a {
            return Err(Error::Shape(format!(
                "feature block arrays disagree: se {}, nap {}, f0 {}, vuv {}",
                self.se.len(),
                self.nap.len(),
                a,
                self.vuv.len()
            )));
        }
        Ok(())
    }
}

/// Targets for one video frame, coefficient-major (`se[m * 8 + k]`).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTarget {
    pub se: [f64; NUM_MELS * BLOCK_LEN],
    pub nap: [f64; NUM_AP_BANDS * BLOCK_LEN],
    pub f0: [f64; BLOCK_LEN],
    pub vuv: [f64; BLOCK_LEN],
}

/// Splits a clip into consecutive chunks of 8 audio frames; chunk `t`
/// holds frames `8t..8t+8`.
pub fn block_by_video_frame(block: &VocoderFeatureBlock) -> Result<Vec<FrameTarget>> {
    block.check_shape()?;
    let a = block.num_frames();
    if !a.is_multiple_of(BLOCK_LEN) {
        return Err(Error::Shape(format!("{a} audio frames is not a multiple of {BLOCK_LEN}")));
    }
    Ok((0..a / BLOCK_LEN)
        .map(|v| {
            let mut target = FrameTarget {
                se: [0.0; NUM_MELS * BLOCK_LEN],
                nap: [0.0; NUM_AP_BANDS * BLOCK_LEN],
                f0: [0.0; BLOCK_LEN],
                vuv: [0.0; BLOCK_LEN],
            };
            for k in 0..BLOCK_LEN {
                let t = v * BLOCK_LEN + k;
                for (m, &x) in block.se_frame(t).iter().enumerate() {
                    target.se[m * BLOCK_LEN + k] = x;
                }
                for (b, &x) in block.nap_frame(t).iter().enumerate() {
                    target.nap[b * BLOCK_LEN + k] = x;
                }
                target.f0[k] = block.f0[t];
                target.vuv[k] = block.vuv[t];
            }
            target
        })
        .collect())
}

/// Inverse of [`block_by_video_frame`].
pub fn assemble_blocks(targets: &[FrameTarget]) -> VocoderFeatureBlock {
    let mut block = VocoderFeatureBlock::zeros(targets.len() * BLOCK_LEN);
    for (v, target) in targets.iter().enumerate() {
        for k in 0..BLOCK_LEN {
            let t = v * BLOCK_LEN + k;
            for m in 0..NUM_MELS {
                block.se[t * NUM_MELS + m] = target.se[m * BLOCK_LEN + k];
            }
            for b in 0..NUM_AP_BANDS {
                block.nap[t * NUM_AP_BANDS + b] = target.nap[b * BLOCK_LEN + k];
            }
            block.f0[t] = target.f0[k];
            block.vuv[t] = target.vuv[k];
        }
    }
    block
}

/// Vocoder parameters recovered from a feature block.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedFeatures {
    pub f0: F0Track,
    pub sp: SpectralEnvelope,
    pub ap: BandAperiodicity,
    pub vuv: Vec<bool>,
    /// Number of inputs that fell outside [0, 1] by more than
    /// [`RANGE_SLACK`] and were clamped.
    pub clamped: usize,
}

/// Mel reduction/expansion plus normalization for one configuration.
pub struct FeaturePipeline {
    cfg: FeatureConfig,
    mel: MelFilterbank,
    inverse: MelInverse,
    fingerprint: [u8; 16],
}

impl FeaturePipeline {
    pub fn new(cfg: FeatureConfig) -> Result<Self> {
        let v = &cfg.vocoder;
        let mel = mel_matrix(cfg.num_mels, v.fft_size, v.sample_rate, cfg.mel_f_low, cfg.mel_f_high)?;
        if cfg.num_mels != NUM_MELS {
            return Err(Error::InvalidArgument(format!("feature format fixes {NUM_MELS} mel bands")));
        }
        let inverse = mel.pseudo_inverse(cfg.mel_regularization)?;
        let fingerprint = cfg.fingerprint();
        Ok(Self {
            cfg,
            mel,
            inverse,
            fingerprint,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn fingerprint(&self) -> [u8; 16] {
        self.fingerprint
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.mel
    }

    pub fn raw_features(&self, a: &Analysis) -> Result<RawFeatures> {
        let n = a.num_frames();
        if a.sp.len() != n || a.ap.len() != n {
            return Err(Error::FrameCountMismatch {
                expected: n,
                actual: if a.sp.len() != n { a.sp.len() } else { a.ap.len() },
            });
        }
        if a.sp.fft_size != self.cfg.vocoder.fft_size {
            return Err(Error::ConfigMismatch(format!(
                "envelope fft size {} vs pipeline {}",
                a.sp.fft_size, self.cfg.vocoder.fft_size
            )));
        }
        let log_mel = a
            .sp
            .frames
            .iter()
            .map(|frame| {
                let energies = self.mel.apply(frame);
                let mut out = [0.0; NUM_MELS];
                for (o, e) in out.iter_mut().zip(energies) {
                    *o = e.max(SPECTRAL_FLOOR).ln();
                }
                out
            })
            .collect();
        let log_f0 = a.f0.values.iter().map(|&f| (f > 0.0).then(|| f.ln())).collect();
        Ok(RawFeatures {
            log_mel,
            ap: a.ap.frames.clone(),
            log_f0,
        })
    }

    pub fn check_stats(&self, stats: &NormalizationStats) -> Result<()> {
        if stats.fingerprint != self.fingerprint {
            return Err(Error::FingerprintMismatch);
        }
        Ok(())
    }

    pub fn reduce(&self, a: &Analysis, stats: &NormalizationStats) -> Result<VocoderFeatureBlock> {
        self.check_stats(stats)?;
        let raw = self.raw_features(a)?;
        Ok(self.normalize(&raw, stats))
    }

    pub fn normalize(&self, raw: &RawFeatures, stats: &NormalizationStats) -> VocoderFeatureBlock {
        let mut block = VocoderFeatureBlock::zeros(raw.len());
        for t in 0..raw.len() {
            for m in 0..NUM_MELS {
                block.se[t * NUM_MELS + m] = stats.normalize(m, raw.log_mel[t][m]).clamp(0.0, 1.0);
            }
            for b in 0..NUM_AP_BANDS {
                let w_ap = stats.normalize(NUM_MELS + b, raw.ap[t][b]).clamp(0.0, 1.0);
                block.nap[t * NUM_AP_BANDS + b] = 1.0 - w_ap;
            }
            if let Some(lf) = raw.log_f0[t] {
                block.f0[t] = stats.normalize(F0_INDEX, lf).clamp(0.0, 1.0);
                block.vuv[t] = 1.0;
            }
        }
        block
    }

    pub fn expand(&self, block: &VocoderFeatureBlock, stats: &NormalizationStats) -> Result<ExpandedFeatures> {
        self.check_stats(stats)?;
        block.check_shape()?;
        let mut clamped = 0usize;
        let mut unit = |v: f64| -> Result<f64> {
            if !v.is_finite() {
                return Err(Error::NonFinite("feature block".into()));
            }
            if !(-RANGE_SLACK..=1.0 + RANGE_SLACK).contains(&v) {
                clamped += 1;
            }
            Ok(v.clamp(0.0, 1.0))
        };
        let a = block.num_frames();
        let mut mel = Vec::with_capacity(a * NUM_MELS);
        let mut ap_frames = Vec::with_capacity(a);
        let mut f0 = Vec::with_capacity(a);
        let mut vuv = Vec::with_capacity(a);
        for t in 0..a {
            for (m, &v) in block.se_frame(t).iter().enumerate() {
                mel.push(stats.denormalize(m, unit(v)?).exp());
            }
            let voiced = unit(block.vuv[t])? >= 0.5;
            let mut ap = [1.0; NUM_AP_BANDS];
            for (b, &v) in block.nap_frame(t).iter().enumerate() {
                let w_ap = 1.0 - unit(v)?;
                if voiced {
                    ap[b] = stats.denormalize(NUM_MELS + b, w_ap).clamp(0.0, 1.0);
                }
            }
            ap_frames.push(ap);
            let wf = unit(block.f0[t])?;
            f0.push(if voiced { stats.denormalize(F0_INDEX, wf).exp() } else { 0.0 });
            vuv.push(voiced);
        }
        let sp_frames = self.inverse.apply_frames(&mel, SPECTRAL_FLOOR);
        let v = &self.cfg.vocoder;
        Ok(ExpandedFeatures {
            f0: F0Track {
                values: f0,
                hop: v.hop,
                sample_rate: v.sample_rate,
            },
            sp: SpectralEnvelope {
                frames: sp_frames,
                fft_size: v.fft_size,
                sample_rate: v.sample_rate,
            },
            ap: BandAperiodicity { frames: ap_frames },
            vuv,
            clamped,
        })
    }

    /// Elementwise extrema over every frame of every clip; F0 over voiced
    /// frames only.
    pub fn compute_stats<'a, I>(&self, corpus: I) -> Result<NormalizationStats>
    where
        I: IntoIterator<Item = &'a RawFeatures>,
    {
        let mut min = [f64::INFINITY; NUM_COEFFS];
        let mut max = [f64::NEG_INFINITY; NUM_COEFFS];
        let mut clips = 0usize;
        let mut update = |i: usize, v: f64| {
            min[i] = min[i].min(v);
            max[i] = max[i].max(v);
        };
        for raw in corpus {
            clips += 1;
            for t in 0..raw.len() {
                for (m, &v) in raw.log_mel[t].iter().enumerate() {
                    update(m, v);
                }
                for (b, &v) in raw.ap[t].iter().enumerate() {
                    update(NUM_MELS + b, v);
                }
                if let Some(lf) = raw.log_f0[t] {
                    update(F0_INDEX, lf);
                }
            }
        }
        if clips == 0 {
            return Err(Error::EmptyInput);
        }
        let degenerate: Vec<usize> = (0..NUM_COEFFS).filter(|&i| !(max[i] > min[i])).collect();
        if !degenerate.is_empty() {
            return Err(Error::DegenerateCoefficients(degenerate));
        }
        Ok(NormalizationStats {
            min,
            max,
            fingerprint: self.fingerprint,
        })
    }
}

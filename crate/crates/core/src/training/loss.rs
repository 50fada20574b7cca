use serde::{Deserialize, Serialize};

use crate::ctc::{Transcript, BLANK};
use crate::error::{Error, Result};
use crate::features::{VocoderFeatureBlock, BLOCK_LEN, NUM_MELS};
use crate::model::ForwardVars;
use crate::nn::{Graph, Real, Var};
use crate::vocoder::NUM_AP_BANDS;

/// Weights of the five task losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub se: f64,
    pub nap: f64,
    pub f0: f64,
    pub vuv: f64,
    pub vsr: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            se: 600.0,
            nap: 50.0,
            f0: 10.0,
            vuv: 10.0,
            vsr: 1.0,
        }
    }
}

impl LossWeights {
    pub fn total(&self) -> f64 {
        self.se + self.nap + self.f0 + self.vuv + self.vsr
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.se, self.nap, self.f0, self.vuv, self.vsr]
    }

    /// Rejects negative or non-finite weights and an all-zero set.
    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().any(|w| !w.is_finite() || *w < 0.0) || self.total() <= 0.0 {
            return Err(Error::InvalidArgument(format!("invalid loss weights {self:?}")));
        }
        Ok(())
    }

    /// Weighted mean of the components `[se, nap, f0, vuv, vsr]`.
    pub fn combine(&self, components: [f64; 5]) -> f64 {
        let s: f64 = self.as_array().iter().zip(components).map(|(w, c)| w * c).sum();
        s / self.total()
    }
}

/// Component losses of one step and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub se: f64,
    pub nap: f64,
    pub f0: f64,
    pub vuv: f64,
    pub vsr: f64,
}

impl LossBreakdown {
    pub fn components(&self) -> [f64; 5] {
        [self.se, self.nap, self.f0, self.vuv, self.vsr]
    }
}

/// Graph handles of the loss terms.
pub struct LossVars {
    pub total: Var,
    pub components: [Var; 5],
}

impl LossVars {
    pub fn breakdown<R: Real>(&self, g: &Graph<R>) -> LossBreakdown {
        let v = |x: Var| g.value(x).data()[0].f64();
        LossBreakdown {
            total: v(self.total),
            se: v(self.components[0]),
            nap: v(self.components[1]),
            f0: v(self.components[2]),
            vuv: v(self.components[3]),
            vsr: v(self.components[4]),
        }
    }
}

/// Target arrays in the decoder layout of a batch (`n = s * B + b`).
pub(crate) fn batch_targets<R: Real>(blocks: &[&VocoderFeatureBlock], seq_len: usize) -> Result<[Vec<R>; 4]> {
    let frames = seq_len * BLOCK_LEN;
    for block in blocks {
        block.check_shape()?;
        if block.num_frames() != frames {
            return Err(Error::FrameCountMismatch {
                expected: frames,
                actual: block.num_frames(),
            });
        }
    }
    let b_n = blocks.len();
    let n = seq_len * b_n;
    let mut se = Vec::with_capacity(n * BLOCK_LEN * NUM_MELS);
    let mut nap = Vec::with_capacity(n * BLOCK_LEN * NUM_AP_BANDS);
    let mut f0 = Vec::with_capacity(n * BLOCK_LEN);
    let mut vuv = Vec::with_capacity(n * BLOCK_LEN);
    for s in 0..seq_len {
        for block in blocks {
            let (lo, hi) = (s * BLOCK_LEN, (s + 1) * BLOCK_LEN);
            se.extend(block.se[lo * NUM_MELS..hi * NUM_MELS].iter().map(|&x| R::of(x)));
            nap.extend(block.nap[lo * NUM_AP_BANDS..hi * NUM_AP_BANDS].iter().map(|&x| R::of(x)));
            f0.extend(block.f0[lo..hi].iter().map(|&x| R::of(x)));
            vuv.extend(block.vuv[lo..hi].iter().map(|&x| R::of(x)));
        }
    }
    Ok([se, nap, f0, vuv])
}

/// Records the multi-task loss of a forward pass against its targets.
/// The voicing term uses the activation before thresholding.
pub fn record_loss<R: Real>(
    g: &mut Graph<R>,
    out: &ForwardVars,
    blocks: &[&VocoderFeatureBlock],
    transcripts: &[&Transcript],
    weights: &LossWeights,
) -> Result<LossVars> {
    weights.validate()?;
    if blocks.len() != out.batch || transcripts.len() != out.batch {
        return Err(Error::Shape(format!(
            "{} targets and {} transcripts for a batch of {}",
            blocks.len(),
            transcripts.len(),
            out.batch
        )));
    }
    let seq_len = g.shape(out.vsr)[0] / out.batch;
    let [se, nap, f0, vuv] = batch_targets::<R>(blocks, seq_len)?;
    let j_se = g.mse(out.se, se)?;
    let j_nap = g.mse(out.nap, nap)?;
    let j_f0 = g.mse(out.f0, f0)?;
    let j_vuv = g.mse(out.vuv_raw, vuv)?;
    let labels: Vec<Vec<usize>> = transcripts.iter().map(|t| t.labels().to_vec()).collect();
    let j_vsr = g.ctc(out.vsr, out.batch, &labels, BLANK)?;
    let components = [j_se, j_nap, j_f0, j_vuv, j_vsr];
    let terms: Vec<(Var, f64)> = components.iter().copied().zip(weights.as_array()).collect();
    let total = g.weighted_sum(&terms, weights.total())?;
    Ok(LossVars { total, components })
}

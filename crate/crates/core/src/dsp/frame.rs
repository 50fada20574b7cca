use crate::error::{Error, Result};

/// Padding applied by [`frame_signal`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    /// Frames start at `t * hop` and must lie fully inside the signal.
    None,
    /// Frame `t` is centered on sample `t * hop`; the signal is extended by
    /// reflection, giving `ceil(len / hop)` frames.
    Center,
}

/// Maps an arbitrary index onto `[0, len)` by mirror reflection around the
/// end samples (`-1 -> 1`, `len -> len - 2`).
pub fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut k = i.rem_euclid(period);
    if k >= len as isize {
        k = period - k;
    }
    k as usize
}

/// Slice of `len` samples centered on `center` (the sample at index `len / 2`
/// of the result), extended by reflection outside the signal.
pub fn segment_at(samples: &[f64], center: isize, len: usize) -> Vec<f64> {
    let start = center - (len / 2) as isize;
    let n = samples.len();
    if start >= 0 && (start as usize + len) <= n {
        return samples[start as usize..start as usize + len].to_vec();
    }
    (0..len as isize)
        .map(|k| samples[reflect_index(start + k, n)])
        .collect()
}

pub fn frame_signal(
    samples: &[f64],
    frame_len: usize,
    hop: usize,
    pad: PadMode,
) -> Result<Vec<Vec<f64>>> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    if hop == 0 || frame_len < hop {
        return Err(Error::InvalidArgument(format!(
            "need frame_len >= hop >= 1, got frame_len {frame_len}, hop {hop}"
        )));
    }
    match pad {
        PadMode::None => {
            if samples.len() < frame_len {
                return Ok(Vec::new());
            }
            let count = 1 + (samples.len() - frame_len) / hop;
            Ok((0..count)
                .map(|t| samples[t * hop..t * hop + frame_len].to_vec())
                .collect())
        }
        PadMode::Center => {
            let count = samples.len().div_ceil(hop);
            Ok((0..count)
                .map(|t| segment_at(samples, (t * hop) as isize, frame_len))
                .collect())
        }
    }
}

/// Weighted overlap-add of center-padded frames back into a signal of
/// `len` samples. Each frame is multiplied by `window` and the sum is
/// divided by the accumulated `analysis * synthesis` window envelope, so
/// frames produced by [`frame_signal`] (`PadMode::Center`) and windowed by
/// `analysis` reconstruct the input exactly.
pub fn overlap_add(
    frames: &[Vec<f64>],
    hop: usize,
    analysis: &[f64],
    synthesis: &[f64],
    len: usize,
) -> Result<Vec<f64>> {
    let frame_len = synthesis.len();
    if analysis.len() != frame_len || frames.iter().any(|f| f.len() != frame_len) {
        return Err(Error::Shape("frame/window length mismatch".into()));
    }
    let mut out = vec![0.0; len];
    let mut norm = vec![0.0; len];
    let half = (frame_len / 2) as isize;
    for (t, frame) in frames.iter().enumerate() {
        let start = (t * hop) as isize - half;
        for (k, (&x, (&wa, &ws))) in frame.iter().zip(analysis.iter().zip(synthesis)).enumerate() {
            let i = start + k as isize;
            if i >= 0 && (i as usize) < len {
                out[i as usize] += x * ws;
                norm[i as usize] += wa * ws;
            }
        }
    }
    for (o, n) in out.iter_mut().zip(&norm) {
        if *n > 1e-12 {
            *o /= n;
        }
    }
    Ok(out)
}

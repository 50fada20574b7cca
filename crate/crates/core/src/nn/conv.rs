//! Convolution kernels: 3-D convolution and 2-D transposed convolution by
//! patch unfolding plus GEMM, with direct nested-loop references.

use serde::{Deserialize, Serialize};

use super::tensor::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv3dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// (depth, height, width)
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvT2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// (height, width)
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    pub padding: [usize; 2],
}

/// `floor((in + 2p - k) / s) + 1` per axis.
pub fn conv3d_out_dims(spec: &Conv3dSpec, input: [usize; 3]) -> Result<[usize; 3]> {
    let mut out = [0; 3];
    for a in 0..3 {
        let padded = input[a] + 2 * spec.padding[a];
        if spec.stride[a] == 0 || spec.kernel[a] == 0 || padded < spec.kernel[a] {
            return Err(Error::Shape(format!(
                "conv3d input {input:?} incompatible with kernel {:?}, stride {:?}, padding {:?}",
                spec.kernel, spec.stride, spec.padding
            )));
        }
        out[a] = (padded - spec.kernel[a]) / spec.stride[a] + 1;
    }
    Ok(out)
}

/// `(in - 1) s + k - 2p` per axis.
pub fn conv_transpose2d_out_dims(spec: &ConvT2dSpec, input: [usize; 2]) -> Result<[usize; 2]> {
    let mut out = [0; 2];
    for a in 0..2 {
        let full = (input[a].max(1) - 1) * spec.stride[a] + spec.kernel[a];
        if input[a] == 0 || spec.stride[a] == 0 || full <= 2 * spec.padding[a] {
            return Err(Error::Shape(format!(
                "transposed conv input {input:?} incompatible with kernel {:?}, stride {:?}, padding {:?}",
                spec.kernel, spec.stride, spec.padding
            )));
        }
        out[a] = full - 2 * spec.padding[a];
    }
    Ok(out)
}

/// Resolved sizes of one 3-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3dGeometry {
    pub spec: Conv3dSpec,
    pub input: [usize; 3],
    pub output: [usize; 3],
}

impl Conv3dGeometry {
    pub fn new(spec: Conv3dSpec, input: [usize; 3]) -> Result<Self> {
        Ok(Self {
            spec,
            input,
            output: conv3d_out_dims(&spec, input)?,
        })
    }

    pub(crate) fn patch_len(&self) -> usize {
        let k = self.spec.kernel;
        self.spec.in_channels * k[0] * k[1] * k[2]
    }

    pub(crate) fn positions(&self) -> usize {
        self.output.iter().product()
    }

    pub(crate) fn input_len(&self) -> usize {
        self.spec.in_channels * self.input.iter().product::<usize>()
    }

    /// Visits (column index, input offset) for every
    /// patch element that lands inside the input.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let [kd, kh, kw] = self.spec.kernel;
        let [sd, sh, sw] = self.spec.stride;
        let [pd, ph, pw] = self.spec.padding;
        let [id, ih, iw] = self.input;
        let [od, oh, ow] = self.output;
        let positions = self.positions();
        for c in 0..self.spec.in_channels {
            for a in 0..kd {
                for b in 0..kh {
                    for e in 0..kw {
                        let row = ((c * kd + a) * kh + b) * kw + e;
                        for z in 0..od {
                            let zi = (z * sd + a) as isize - pd as isize;
                            if zi < 0 || zi >= id as isize {
                                continue;
                            }
                            for y in 0..oh {
                                let yi = (y * sh + b) as isize - ph as isize;
                                if yi < 0 || yi >= ih as isize {
                                    continue;
                                }
                                let base = ((c * id + zi as usize) * ih + yi as usize) * iw;
                                let pos_base = (z * oh + y) * ow;
                                for x in 0..ow {
                                    let xi = (x * sw + e) as isize - pw as isize;
                                    if xi < 0 || xi >= iw as isize {
                                        continue;
                                    }
                                    f(row * positions + pos_base + x, base + xi as usize);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Unfolds one sample `[C, D, H, W]` into `[patch_len, positions]`.
    pub(crate) fn im2col<R: Real>(&self, x: &[R], col: &mut [R]) {
        col.iter_mut().for_each(|v| *v = R::zero());
        self.for_each_tap(|ci, xi| col[ci] = x[xi]);
    }

    /// Adjoint of [`Self::im2col`]: accumulates patch values into `dx`.
    pub(crate) fn col2im<R: Real>(&self, col: &[R], dx: &mut [R]) {
        self.for_each_tap(|ci, xi| dx[xi] += col[ci]);
    }
}

/// Direct 3-D convolution. `x` is `[N, C, D, H, W]`, `w` is
/// `[Co, C, kd, kh, kw]`; returns `[N, Co, D', H', W']`.
pub fn conv3d_naive<R: Real>(x: &[R], n: usize, input: [usize; 3], w: &[R], b: &[R], spec: &Conv3dSpec) -> Result<Vec<R>> {
    let out = conv3d_out_dims(spec, input)?;
    let [id, ih, iw] = input;
    let [kd, kh, kw] = spec.kernel;
    let (ci_n, co_n) = (spec.in_channels, spec.out_channels);
    let mut y = vec![R::zero(); n * co_n * out.iter().product::<usize>()];
    let mut idx = 0;
    for s in 0..n {
        for co in 0..co_n {
            for z in 0..out[0] {
                for yy in 0..out[1] {
                    for xx in 0..out[2] {
                        let mut acc = b[co];
                        for ci in 0..ci_n {
                            for a in 0..kd {
                                for bb in 0..kh {
                                    for e in 0..kw {
                                        let zi = (z * spec.stride[0] + a) as isize - spec.padding[0] as isize;
                                        let yi = (yy * spec.stride[1] + bb) as isize - spec.padding[1] as isize;
                                        let xi = (xx * spec.stride[2] + e) as isize - spec.padding[2] as isize;
                                        if zi < 0 || yi < 0 || xi < 0 || zi >= id as isize || yi >= ih as isize || xi >= iw as isize {
                                            continue;
                                        }
                                        let xv = x[(((s * ci_n + ci) * id + zi as usize) * ih + yi as usize) * iw + xi as usize];
                                        let wv = w[(((co * ci_n + ci) * kd + a) * kh + bb) * kw + e];
                                        acc += xv * wv;
                                    }
                                }
                            }
                        }
                        y[idx] = acc;
                        idx += 1;
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Direct 2-D transposed convolution. `x` is `[N, Ci, H, W]`, `w` is
/// `[Ci, Co, kh, kw]`; returns `[N, Co, H', W']`.
pub fn conv_transpose2d_naive<R: Real>(x: &[R], n: usize, input: [usize; 2], w: &[R], b: &[R], spec: &ConvT2dSpec) -> Result<Vec<R>> {
    let out = conv_transpose2d_out_dims(spec, input)?;
    let [ih, iw] = input;
    let [kh, kw] = spec.kernel;
    let (ci_n, co_n) = (spec.in_channels, spec.out_channels);
    let plane = out[0] * out[1];
    let mut y = vec![R::zero(); n * co_n * plane];
    for s in 0..n {
        for co in 0..co_n {
            for v in &mut y[(s * co_n + co) * plane..(s * co_n + co + 1) * plane] {
                *v = b[co];
            }
        }
        for ci in 0..ci_n {
            for i in 0..ih {
                for j in 0..iw {
                    let xv = x[((s * ci_n + ci) * ih + i) * iw + j];
                    for co in 0..co_n {
                        for a in 0..kh {
                            for e in 0..kw {
                                let oy = (i * spec.stride[0] + a) as isize - spec.padding[0] as isize;
                                let ox = (j * spec.stride[1] + e) as isize - spec.padding[1] as isize;
                                if oy < 0 || ox < 0 || oy >= out[0] as isize || ox >= out[1] as isize {
                                    continue;
                                }
                                let wv = w[((ci * co_n + co) * kh + a) * kw + e];
                                y[(s * co_n + co) * plane + oy as usize * out[1] + ox as usize] += xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Scatter/gather map between transposed-conv columns
/// `[Co * kh * kw, H * W]` and the output plane `[Co, H', W']`.
pub(crate) struct ConvT2dGeometry {
    pub spec: ConvT2dSpec,
    pub input: [usize; 2],
    pub output: [usize; 2],
}

impl ConvT2dGeometry {
    pub fn new(spec: ConvT2dSpec, input: [usize; 2]) -> Result<Self> {
        Ok(Self {
            spec,
            input,
            output: conv_transpose2d_out_dims(&spec, input)?,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.spec.out_channels * self.spec.kernel[0] * self.spec.kernel[1]
    }

    pub fn positions(&self) -> usize {
        self.input[0] * self.input[1]
    }

    pub fn output_len(&self) -> usize {
        self.spec.out_channels * self.output[0] * self.output[1]
    }

    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let [kh, kw] = self.spec.kernel;
        let [sh, sw] = self.spec.stride;
        let [ph, pw] = self.spec.padding;
        let [ih, iw] = self.input;
        let [oh, ow] = self.output;
        let positions = self.positions();
        for co in 0..self.spec.out_channels {
            for a in 0..kh {
                for e in 0..kw {
                    let row = (co * kh + a) * kw + e;
                    for i in 0..ih {
                        let oy = (i * sh + a) as isize - ph as isize;
                        if oy < 0 || oy >= oh as isize {
                            continue;
                        }
                        for j in 0..iw {
                            let ox = (j * sw + e) as isize - pw as isize;
                            if ox < 0 || ox >= ow as isize {
                                continue;
                            }
                            f(row * positions + i * iw + j, (co * oh + oy as usize) * ow + ox as usize);
                        }
                    }
                }
            }
        }
    }

    pub fn scatter<R: Real>(&self, col: &[R], out: &mut [R]) {
        self.for_each_tap(|ci, oi| out[oi] += col[ci]);
    }

    pub fn gather<R: Real>(&self, dout: &[R], col: &mut [R]) {
        col.iter_mut().for_each(|v| *v = R::zero());
        self.for_each_tap(|ci, oi| col[ci] = dout[oi]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mouth_first_layer_dims() {
        let spec = Conv3dSpec { in_channels: 3, out_channels: 64, kernel: [7, 4, 4], stride: [1, 2, 2], padding: [0, 1, 1] };
        assert_eq!(conv3d_out_dims(&spec, [7, 64, 96]).unwrap(), [1, 32, 48]);
        let bad = Conv3dSpec { kernel: [9, 4, 4], ..spec };
        let err = conv3d_out_dims(&bad, [7, 64, 96]).unwrap_err().to_string();
        assert!(err.contains("[7, 64, 96]") && err.contains("[9, 4, 4]"), "{err}");
    }

    #[test]
    fn decoder_chains() {
        let chain = |layers: &[([usize; 2], [usize; 2])]| {
            let mut d = [1, 1];
            for &(kernel, stride) in layers {
                let spec = ConvT2dSpec { in_channels: 1, out_channels: 1, kernel, stride, padding: [0, 0] };
                d = conv_transpose2d_out_dims(&spec, d).unwrap();
            }
            d
        };
        assert_eq!(chain(&[([1, 6], [1, 1]), ([2, 4], [1, 2]), ([4, 4], [1, 2]), ([4, 2], [1, 2])]), [8, 60]);
        assert_eq!(chain(&[([4, 1], [1, 1]), ([3, 3], [1, 1]), ([3, 3], [1, 1])]), [8, 5]);
    }

    #[test]
    fn unit_kernels_are_channel_mixing() {
        let spec = Conv3dSpec { in_channels: 2, out_channels: 1, kernel: [1, 1, 1], stride: [1, 1, 1], padding: [0, 0, 0] };
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = conv3d_naive(&x, 1, [1, 1, 2], &[0.5, -1.0], &[0.0], &spec).unwrap();
        assert_eq!(y, vec![0.5 - 3.0, 1.0 - 4.0]);
        let t = ConvT2dSpec { in_channels: 2, out_channels: 1, kernel: [1, 1], stride: [1, 1], padding: [0, 0] };
        let y = conv_transpose2d_naive(&x, 1, [1, 2], &[0.5, -1.0], &[0.0], &t).unwrap();
        assert_eq!(y, vec![0.5 - 3.0, 1.0 - 4.0]);
    }
}

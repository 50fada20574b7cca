//! Single-layer GRU with the gate layout (reset, update, new) and
//! `h_0 = 0`:
//!
//! ```text
//! r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
//! z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
//! n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
//! h' = (1 - z) * n + z * h
//! ```

use super::tensor::Real;

pub(crate) struct GruDims {
    pub steps: usize,
    pub batch: usize,
    pub input: usize,
    pub hidden: usize,
}

pub(crate) struct GruWeights<'a, R> {
    pub w_ih: &'a [R],
    pub w_hh: &'a [R],
    pub b_ih: &'a [R],
    pub b_hh: &'a [R],
}

/// Per-step activations kept for the backward pass, each `[S, B, H]`.
pub(crate) struct GruCache<R> {
    r: Vec<R>,
    z: Vec<R>,
    n: Vec<R>,
    hn: Vec<R>,
}

fn sigmoid<R: Real>(v: R) -> R {
    R::one() / (R::one() + (-v).exp())
}

/// `out[rows, 3H] = x[rows, in] W^T + b`
fn affine<R: Real>(x: &[R], rows: usize, inp: usize, w: &[R], b: &[R], out: &mut [R]) {
    let h3 = b.len();
    for r in 0..rows {
        out[r * h3..(r + 1) * h3].copy_from_slice(b);
    }
    R::gemm(rows, inp, h3, R::one(), x, (inp as isize, 1), w, (1, inp as isize), R::one(), out, (h3 as isize, 1));
}

pub(crate) fn gru_forward<R: Real>(x: &[R], d: &GruDims, w: &GruWeights<R>) -> (Vec<R>, GruCache<R>) {
    let (s_n, b_n, h) = (d.steps, d.batch, d.hidden);
    let mut gx = vec![R::zero(); s_n * b_n * 3 * h];
    affine(x, s_n * b_n, d.input, w.w_ih, w.b_ih, &mut gx);
    let mut out = vec![R::zero(); s_n * b_n * h];
    let mut cache = GruCache {
        r: vec![R::zero(); out.len()],
        z: vec![R::zero(); out.len()],
        n: vec![R::zero(); out.len()],
        hn: vec![R::zero(); out.len()],
    };
    let mut h_prev = vec![R::zero(); b_n * h];
    let mut gh = vec![R::zero(); b_n * 3 * h];
    for s in 0..s_n {
        affine(&h_prev, b_n, h, w.w_hh, w.b_hh, &mut gh);
        for b in 0..b_n {
            let gxr = &gx[(s * b_n + b) * 3 * h..(s * b_n + b + 1) * 3 * h];
            let ghr = &gh[b * 3 * h..(b + 1) * 3 * h];
            let o = (s * b_n + b) * h;
            for j in 0..h {
                let r = sigmoid(gxr[j] + ghr[j]);
                let z = sigmoid(gxr[h + j] + ghr[h + j]);
                let hn = ghr[2 * h + j];
                let n = (gxr[2 * h + j] + r * hn).tanh();
                let hp = h_prev[b * h + j];
                out[o + j] = (R::one() - z) * n + z * hp;
                cache.r[o + j] = r;
                cache.z[o + j] = z;
                cache.n[o + j] = n;
                cache.hn[o + j] = hn;
            }
        }
        h_prev.copy_from_slice(&out[s * b_n * h..(s + 1) * b_n * h]);
    }
    (out, cache)
}

pub(crate) struct GruGrads<R> {
    pub dx: Vec<R>,
    pub w_ih: Vec<R>,
    pub w_hh: Vec<R>,
    pub b_ih: Vec<R>,
    pub b_hh: Vec<R>,
}

/// Backpropagation through time given `dout = dL/d out`.
pub(crate) fn gru_backward<R: Real>(
    x: &[R],
    out: &[R],
    dout: &[R],
    cache: &GruCache<R>,
    d: &GruDims,
    w: &GruWeights<R>,
) -> GruGrads<R> {
    let (s_n, b_n, h, inp) = (d.steps, d.batch, d.hidden, d.input);
    let h3 = 3 * h;
    let mut dgx = vec![R::zero(); s_n * b_n * h3];
    let mut g = GruGrads {
        dx: vec![R::zero(); x.len()],
        w_ih: vec![R::zero(); w.w_ih.len()],
        w_hh: vec![R::zero(); w.w_hh.len()],
        b_ih: vec![R::zero(); h3],
        b_hh: vec![R::zero(); h3],
    };
    let zeros = vec![R::zero(); b_n * h];
    let mut dh = vec![R::zero(); b_n * h];
    let mut dgh = vec![R::zero(); b_n * h3];
    for s in (0..s_n).rev() {
        let h_prev: &[R] = if s == 0 { &zeros } else { &out[(s - 1) * b_n * h..s * b_n * h] };
        for (a, &v) in dh.iter_mut().zip(&dout[s * b_n * h..(s + 1) * b_n * h]) {
            *a += v;
        }
        for b in 0..b_n {
            let o = (s * b_n + b) * h;
            let dgxr = &mut dgx[(s * b_n + b) * h3..(s * b_n + b + 1) * h3];
            let dghr = &mut dgh[b * h3..(b + 1) * h3];
            for j in 0..h {
                let (r, z, n, hn) = (cache.r[o + j], cache.z[o + j], cache.n[o + j], cache.hn[o + j]);
                let dhj = dh[b * h + j];
                let dn = dhj * (R::one() - z);
                let dz = dhj * (h_prev[b * h + j] - n);
                let da_n = dn * (R::one() - n * n);
                let da_r = da_n * hn * r * (R::one() - r);
                let da_z = dz * z * (R::one() - z);
                dgxr[j] = da_r;
                dgxr[h + j] = da_z;
                dgxr[2 * h + j] = da_n;
                dghr[j] = da_r;
                dghr[h + j] = da_z;
                dghr[2 * h + j] = da_n * r;
                dh[b * h + j] = dhj * z;
            }
        }
        // dh_prev += dgh W_hh ; dW_hh += dgh^T h_prev
        R::gemm(b_n, h3, h, R::one(), &dgh, (h3 as isize, 1), w.w_hh, (h as isize, 1), R::one(), &mut dh, (h as isize, 1));
        R::gemm(h3, b_n, h, R::one(), &dgh, (1, h3 as isize), h_prev, (h as isize, 1), R::one(), &mut g.w_hh, (h as isize, 1));
        for b in 0..b_n {
            for k in 0..h3 {
                g.b_hh[k] += dgh[b * h3 + k];
            }
        }
    }
    let rows = s_n * b_n;
    R::gemm(rows, h3, inp, R::one(), &dgx, (h3 as isize, 1), w.w_ih, (inp as isize, 1), R::zero(), &mut g.dx, (inp as isize, 1));
    R::gemm(h3, rows, inp, R::one(), &dgx, (1, h3 as isize), x, (inp as isize, 1), R::zero(), &mut g.w_ih, (inp as isize, 1));
    for r in 0..rows {
        for k in 0..h3 {
            g.b_ih[k] += dgx[r * h3 + k];
        }
    }
    g
}

/// Scalar-loop GRU over `x[S][B][I]`, for checking the GEMM path.
#[allow(clippy::too_many_arguments)]
pub fn gru_reference(
    x: &[f64],
    steps: usize,
    batch: usize,
    input: usize,
    hidden: usize,
    w_ih: &[f64],
    w_hh: &[f64],
    b_ih: &[f64],
    b_hh: &[f64],
) -> Vec<f64> {
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let dot = |w: &[f64], row: usize, v: &[f64]| -> f64 { (0..v.len()).map(|i| w[row * v.len() + i] * v[i]).sum() };
    let mut out = Vec::with_capacity(steps * batch * hidden);
    let mut hs = vec![vec![0.0; hidden]; batch];
    for s in 0..steps {
        for (b, h) in hs.iter_mut().enumerate() {
            let xv = &x[(s * batch + b) * input..(s * batch + b + 1) * input];
            let mut next = vec![0.0; hidden];
            for j in 0..hidden {
                let r = sig(dot(w_ih, j, xv) + b_ih[j] + dot(w_hh, j, h) + b_hh[j]);
                let z = sig(dot(w_ih, hidden + j, xv) + b_ih[hidden + j] + dot(w_hh, hidden + j, h) + b_hh[hidden + j]);
                let n = (dot(w_ih, 2 * hidden + j, xv) + b_ih[2 * hidden + j]
                    + r * (dot(w_hh, 2 * hidden + j, h) + b_hh[2 * hidden + j]))
                    .tanh();
                next[j] = (1.0 - z) * n + z * h[j];
            }
            *h = next;
            out.extend_from_slice(h);
        }
    }
    out
}

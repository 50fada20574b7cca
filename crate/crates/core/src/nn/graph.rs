//! Recording of a forward pass and its reverse sweep.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::conv::{Conv3dGeometry, ConvT2dGeometry, ConvT2dSpec, Conv3dSpec};
use super::gru::{gru_backward, gru_forward, GruCache, GruDims, GruWeights};
use super::params::{ParamId, ParamKind, ParamStore};
use super::tensor::{Real, Tensor};
use super::{BN_EPS, BN_MOMENTUM};
use crate::ctc;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<R> {
    Owned(Tensor<R>),
    Param(ParamId),
}

enum Op<R> {
    Input,
    Param(ParamId),
    Conv3d { x: Var, w: Var, b: Var, geom: Conv3dGeometry },
    ConvT2d { x: Var, w: Var, b: Var, geom: ConvT2dGeometry },
    Linear { x: Var, w: Var, b: Var },
    Gru { x: Var, w: [Var; 4], cache: GruCache<R>, dims: GruDims },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<R>, inv_std: Vec<R>, batch_stats: bool },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    LogSoftmax(Var),
    Softmax(Var),
    /// Elementwise product with a constant (dropout masks, voicing masks).
    Mask { x: Var, mask: Vec<R> },
    Reshape(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Mse { x: Var, target: Vec<R> },
    /// Gradient of the loss with respect to the input, saved at forward time.
    Ctc { x: Var, grad: Vec<R> },
    WeightedSum { terms: Vec<(Var, R)>, divisor: R },
}

struct Node<R> {
    value: Value<R>,
    op: Op<R>,
    needs_grad: bool,
}

/// Batch statistics from a training-mode batch norm, to be folded into
/// the running buffers with [`BnUpdate::apply`].
#[derive(Debug, Clone, PartialEq)]
pub struct BnUpdate<R> {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub mean: Vec<R>,
    /// Unbiased batch variance.
    pub var: Vec<R>,
}

impl<R: Real> BnUpdate<R> {
    pub fn apply(&self, store: &mut ParamStore<R>) {
        let m = R::of(BN_MOMENTUM);
        for (id, batch) in [(self.running_mean, &self.mean), (self.running_var, &self.var)] {
            for (r, &b) in store.get_mut(id).data_mut().iter_mut().zip(batch) {
                *r = (R::one() - m) * *r + m * b;
            }
        }
    }
}

/// Gradients of the learned parameters, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Gradients<R> {
    grads: Vec<Option<Tensor<R>>>,
}

impl<R: Real> Gradients<R> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<R>> {
        self.grads.get(id.index()).and_then(|g| g.as_ref())
    }
}

/// Tape of one forward pass over parameters borrowed from a store.
pub struct Graph<'s, R: Real> {
    store: &'s ParamStore<R>,
    nodes: Vec<Node<R>>,
    param_vars: HashMap<ParamId, Var>,
    training: bool,
    rng: ChaCha8Rng,
    bn_updates: Vec<BnUpdate<R>>,
    consumed: bool,
}

fn acc<R: Real>(slot: &mut Option<Vec<R>>, g: Vec<R>) {
    match slot {
        Some(s) => s.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

impl<'s, R: Real> Graph<'s, R> {
    /// `seed` drives the dropout masks.
    pub fn new(store: &'s ParamStore<R>, training: bool, seed: u64) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
            bn_updates: Vec::new(),
            consumed: false,
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn data(&self, v: Var) -> &[R] {
        self.value(v).data()
    }

    fn push(&mut self, value: Tensor<R>, op: Op<R>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn bn_updates(&self) -> &[BnUpdate<R>] {
        &self.bn_updates
    }

    pub fn input(&mut self, t: Tensor<R>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Input,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            needs_grad: self.store.kind(id) == ParamKind::Weight,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    fn expect_shape(&self, v: Var, shape: &[usize], what: &str) -> Result<()> {
        if self.shape(v) != shape {
            return Err(Error::Shape(format!("{what}: expected {shape:?}, got {:?}", self.shape(v))));
        }
        Ok(())
    }

    /// `x: [N, C, D, H, W]`, weight `[Co, C, kd, kh, kw]`, bias `[Co]`.
    pub fn conv3d(&mut self, x: Var, w: ParamId, b: ParamId, spec: &Conv3dSpec) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 5 || xs[1] != spec.in_channels {
            return Err(Error::Shape(format!(
                "conv3d input {xs:?} does not match {} input channels",
                spec.in_channels
            )));
        }
        let (w, b) = (self.param(w), self.param(b));
        let k = spec.kernel;
        self.expect_shape(w, &[spec.out_channels, spec.in_channels, k[0], k[1], k[2]], "conv3d weight")?;
        self.expect_shape(b, &[spec.out_channels], "conv3d bias")?;
        let geom = Conv3dGeometry::new(*spec, [xs[2], xs[3], xs[4]])?;
        let (n, co, kk, p) = (xs[0], spec.out_channels, geom.patch_len(), geom.positions());
        let mut out = vec![R::zero(); n * co * p];
        let mut col = vec![R::zero(); kk * p];
        let (xd, wd, bd) = (self.data(x), self.data(w), self.data(b));
        for s in 0..n {
            geom.im2col(&xd[s * geom.input_len()..(s + 1) * geom.input_len()], &mut col);
            let o = &mut out[s * co * p..(s + 1) * co * p];
            for (c, chunk) in o.chunks_exact_mut(p).enumerate() {
                chunk.iter_mut().for_each(|v| *v = bd[c]);
            }
            R::gemm(co, kk, p, R::one(), wd, (kk as isize, 1), &col, (p as isize, 1), R::one(), o, (p as isize, 1));
        }
        let o = geom.output;
        let value = Tensor::new(&[n, co, o[0], o[1], o[2]], out)?;
        Ok(self.push(value, Op::Conv3d { x, w, b, geom }, &[x, w, b]))
    }

    /// `x: [N, Ci, H, W]`, weight `[Ci, Co, kh, kw]`, bias `[Co]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: ParamId, b: ParamId, spec: &ConvT2dSpec) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || xs[1] != spec.in_channels {
            return Err(Error::Shape(format!(
                "transposed conv input {xs:?} does not match {} input channels",
                spec.in_channels
            )));
        }
        let (w, b) = (self.param(w), self.param(b));
        self.expect_shape(w, &[spec.in_channels, spec.out_channels, spec.kernel[0], spec.kernel[1]], "convT weight")?;
        self.expect_shape(b, &[spec.out_channels], "convT bias")?;
        let geom = ConvT2dGeometry::new(*spec, [xs[2], xs[3]])?;
        let (n, ci, rows, p) = (xs[0], spec.in_channels, geom.col_rows(), geom.positions());
        let olen = geom.output_len();
        let plane = geom.output[0] * geom.output[1];
        let mut out = vec![R::zero(); n * olen];
        let mut col = vec![R::zero(); rows * p];
        let (xd, wd, bd) = (self.data(x), self.data(w), self.data(b));
        for s in 0..n {
            R::gemm(rows, ci, p, R::one(), wd, (1, rows as isize), &xd[s * ci * p..(s + 1) * ci * p], (p as isize, 1), R::zero(), &mut col, (p as isize, 1));
            let o = &mut out[s * olen..(s + 1) * olen];
            for (c, chunk) in o.chunks_exact_mut(plane).enumerate() {
                chunk.iter_mut().for_each(|v| *v = bd[c]);
            }
            geom.scatter(&col, o);
        }
        let value = Tensor::new(&[n, spec.out_channels, geom.output[0], geom.output[1]], out)?;
        Ok(self.push(value, Op::ConvT2d { x, w, b, geom }, &[x, w, b]))
    }

    /// `x: [N, in]`, weight `[out, in]`, bias `[out]`.
    pub fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let (w, b) = (self.param(w), self.param(b));
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || self.shape(b) != [ws[0]] {
            return Err(Error::Shape(format!("linear: input {xs:?}, weight {ws:?}")));
        }
        let (n, i, o) = (xs[0], xs[1], ws[0]);
        let mut out = Vec::with_capacity(n * o);
        for _ in 0..n {
            out.extend_from_slice(self.data(b));
        }
        R::gemm(n, i, o, R::one(), self.data(x), (i as isize, 1), self.data(w), (1, i as isize), R::one(), &mut out, (o as isize, 1));
        let value = Tensor::new(&[n, o], out)?;
        Ok(self.push(value, Op::Linear { x, w, b }, &[x, w, b]))
    }

    /// `x: [S, B, I]` to `[S, B, H]`; weights as in the GRU module docs,
    /// `w_ih [3H, I]`, `w_hh [3H, H]`, biases `[3H]`.
    pub fn gru(&mut self, x: Var, w_ih: ParamId, w_hh: ParamId, b_ih: ParamId, b_hh: ParamId) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let w = [self.param(w_ih), self.param(w_hh), self.param(b_ih), self.param(b_hh)];
        let h3 = self.shape(w[0]).first().copied().unwrap_or(0);
        if xs.len() != 3 || h3 == 0 || h3 % 3 != 0 {
            return Err(Error::Shape(format!("gru input {xs:?}, w_ih {:?}", self.shape(w[0]))));
        }
        let h = h3 / 3;
        self.expect_shape(w[0], &[h3, xs[2]], "gru w_ih")?;
        self.expect_shape(w[1], &[h3, h], "gru w_hh")?;
        self.expect_shape(w[2], &[h3], "gru b_ih")?;
        self.expect_shape(w[3], &[h3], "gru b_hh")?;
        let dims = GruDims {
            steps: xs[0],
            batch: xs[1],
            input: xs[2],
            hidden: h,
        };
        let weights = GruWeights {
            w_ih: self.data(w[0]),
            w_hh: self.data(w[1]),
            b_ih: self.data(w[2]),
            b_hh: self.data(w[3]),
        };
        let (out, cache) = gru_forward(self.data(x), &dims, &weights);
        let value = Tensor::new(&[xs[0], xs[1], h], out)?;
        Ok(self.push(value, Op::Gru { x, w, cache, dims }, &[x, w[0], w[1], w[2], w[3]]))
    }

    /// Per-channel normalization of `x: [N, C, ...]` over all axes but 1.
    /// Uses batch statistics in training mode (recording a [`BnUpdate`])
    /// and the running buffers otherwise.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        running_mean: ParamId,
        running_var: ParamId,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(Error::Shape(format!("batch norm needs [N, C, ...], got {xs:?}")));
        }
        let (n, c) = (xs[0], xs[1]);
        let inner: usize = xs[2..].iter().product();
        let (g, bt) = (self.param(gamma), self.param(beta));
        for v in [g, bt] {
            self.expect_shape(v, &[c], "batch norm affine")?;
        }
        for id in [running_mean, running_var] {
            if self.store.get(id).shape() != [c] {
                return Err(Error::Shape(format!("batch norm buffer {} has wrong shape", self.store.name(id))));
            }
        }
        let count = n * inner;
        let xd = self.data(x);
        let idx = |s: usize, ch: usize, i: usize| (s * c + ch) * inner + i;
        let (mean, var) = if self.training {
            if count < 2 {
                return Err(Error::Shape("batch norm in training mode needs at least two values per channel".into()));
            }
            let mut mean = vec![R::zero(); c];
            let mut var = vec![R::zero(); c];
            for ch in 0..c {
                let mut s1 = 0.0f64;
                for s in 0..n {
                    for i in 0..inner {
                        s1 += xd[idx(s, ch, i)].f64();
                    }
                }
                let m = s1 / count as f64;
                let mut s2 = 0.0f64;
                for s in 0..n {
                    for i in 0..inner {
                        let d = xd[idx(s, ch, i)].f64() - m;
                        s2 += d * d;
                    }
                }
                mean[ch] = R::of(m);
                var[ch] = R::of(s2 / count as f64);
            }
            (mean, var)
        } else {
            (self.store.get(running_mean).data().to_vec(), self.store.get(running_var).data().to_vec())
        };
        let inv_std: Vec<R> = var.iter().map(|&v| R::one() / (v + R::of(BN_EPS)).sqrt()).collect();
        let (gd, bd) = (self.data(g), self.data(bt));
        let mut xhat = vec![R::zero(); xd.len()];
        let mut out = vec![R::zero(); xd.len()];
        for s in 0..n {
            for ch in 0..c {
                for i in 0..inner {
                    let j = idx(s, ch, i);
                    xhat[j] = (xd[j] - mean[ch]) * inv_std[ch];
                    out[j] = gd[ch] * xhat[j] + bd[ch];
                }
            }
        }
        if self.training {
            let unbias = R::of(count as f64 / (count - 1) as f64);
            self.bn_updates.push(BnUpdate {
                running_mean,
                running_var,
                mean,
                var: var.iter().map(|&v| v * unbias).collect(),
            });
        }
        let value = Tensor::new(&xs, out)?;
        let batch_stats = self.training;
        Ok(self.push(value, Op::BatchNorm { x, gamma: g, beta: bt, xhat, inv_std, batch_stats }, &[x, g, bt]))
    }

    fn unary(&mut self, x: Var, f: impl Fn(R) -> R, op: Op<R>) -> Var {
        let t = self.value(x);
        let value = Tensor::new(t.shape(), t.data().iter().map(|&v| f(v)).collect()).expect("same shape");
        self.push(value, op, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(R::zero()), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| R::one() / (R::one() + (-v).exp()), Op::Sigmoid(x))
    }

    fn rows(&self, x: Var) -> Result<usize> {
        match self.shape(x).last() {
            Some(&k) if k > 0 => Ok(k),
            _ => Err(Error::Shape(format!("softmax over empty last axis of {:?}", self.shape(x)))),
        }
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let k = self.rows(x)?;
        let t = self.value(x);
        let mut out = t.data().to_vec();
        for row in out.chunks_exact_mut(k) {
            let m = row.iter().copied().fold(R::neg_infinity(), R::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<R>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let value = Tensor::new(t.shape(), out)?;
        Ok(self.push(value, Op::LogSoftmax(x), &[x]))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let k = self.rows(x)?;
        let t = self.value(x);
        let mut out = t.data().to_vec();
        for row in out.chunks_exact_mut(k) {
            let m = row.iter().copied().fold(R::neg_infinity(), R::max);
            row.iter_mut().for_each(|v| *v = (*v - m).exp());
            let s: R = row.iter().copied().sum();
            row.iter_mut().for_each(|v| *v = *v / s);
        }
        let value = Tensor::new(t.shape(), out)?;
        Ok(self.push(value, Op::Softmax(x), &[x]))
    }

    /// Inverted dropout: identity outside training mode, otherwise zeroes
    /// each value with probability `p` and scales survivors by `1/(1-p)`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("dropout probability {p} outside [0, 1)")));
        }
        if !self.training || p == 0.0 {
            return Ok(x);
        }
        let scale = R::of(1.0 / (1.0 - p));
        let n = self.value(x).numel();
        let mask: Vec<R> = (0..n)
            .map(|_| if self.rng.random::<f64>() < p { R::zero() } else { scale })
            .collect();
        self.mul_const(x, mask)
    }

    /// Elementwise product with a constant of the same size.
    pub fn mul_const(&mut self, x: Var, mask: Vec<R>) -> Result<Var> {
        let t = self.value(x);
        if mask.len() != t.numel() {
            return Err(Error::Shape(format!("mask of {} values for {:?}", mask.len(), t.shape())));
        }
        let value = Tensor::new(t.shape(), t.data().iter().zip(&mask).map(|(&a, &b)| a * b).collect())?;
        Ok(self.push(value, Op::Mask { x, mask }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(R, R) -> R, op: Op<R>) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: R = self.data(x).iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, x: Var, target: Vec<R>) -> Result<Var> {
        let xd = self.data(x);
        if target.len() != xd.len() || xd.is_empty() {
            return Err(Error::Shape(format!("mse target of {} values for {:?}", target.len(), self.shape(x))));
        }
        let s: R = xd.iter().zip(&target).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let value = Tensor::scalar(s / R::of(xd.len() as f64));
        Ok(self.push(value, Op::Mse { x, target }, &[x]))
    }

    /// Mean CTC loss over a batch. `x` holds log-probabilities
    /// `[S * B, K]` with row `s * B + b` for frame `s` of sequence `b`.
    pub fn ctc(&mut self, x: Var, batch: usize, targets: &[Vec<usize>], blank: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || batch == 0 || !xs[0].is_multiple_of(batch) || targets.len() != batch {
            return Err(Error::Shape(format!("ctc input {xs:?} with batch {batch} and {} targets", targets.len())));
        }
        let (steps, k) = (xs[0] / batch, xs[1]);
        let xd = self.data(x);
        let mut grad = vec![R::zero(); xd.len()];
        let mut total = 0.0;
        let mut seq = vec![0.0; steps * k];
        for (b, target) in targets.iter().enumerate() {
            for s in 0..steps {
                for j in 0..k {
                    seq[s * k + j] = xd[(s * batch + b) * k + j].f64();
                }
            }
            let r = ctc::ctc_loss(&seq, k, target, blank)?;
            total += r.loss;
            for s in 0..steps {
                for j in 0..k {
                    grad[(s * batch + b) * k + j] = R::of(r.grad[s * k + j] / batch as f64);
                }
            }
        }
        let value = Tensor::scalar(R::of(total / batch as f64));
        Ok(self.push(value, Op::Ctc { x, grad }, &[x]))
    }

    /// `(sum_i w_i * terms_i) / divisor` over scalars.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)], divisor: f64) -> Result<Var> {
        let mut s = R::zero();
        for &(v, w) in terms {
            if self.value(v).numel() != 1 {
                return Err(Error::Shape(format!("weighted sum term has shape {:?}", self.shape(v))));
            }
            s += R::of(w) * self.data(v)[0];
        }
        let ins: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let terms = terms.iter().map(|&(v, w)| (v, R::of(w))).collect();
        let divisor = R::of(divisor);
        Ok(self.push(Tensor::scalar(s / divisor), Op::WeightedSum { terms, divisor }, &ins))
    }

    /// Reverse sweep from a scalar. A tape supports one sweep.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<R>> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape(format!("backward needs a scalar, got {:?}", self.shape(loss))));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<R>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![R::one()]);
        let mut out = Gradients {
            grads: (0..self.store.len()).map(|_| None).collect(),
        };
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let y = self.value(Var(i)).data();
            let wants = |v: Var| self.nodes[v.0].needs_grad;
            let mut send: Vec<(Var, Vec<R>)> = Vec::new();
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Param(id) => {
                    out.grads[id.index()] = Some(Tensor::new(self.store.get(*id).shape(), g)?);
                    continue;
                }
                Op::Conv3d { x, w, b, geom } => {
                    let (co, kk, p) = (geom.spec.out_channels, geom.patch_len(), geom.positions());
                    let n = self.shape(*x)[0];
                    let (xd, wd) = (self.data(*x), self.data(*w));
                    let mut dw = vec![R::zero(); wd.len()];
                    let mut db = vec![R::zero(); co];
                    let mut dx = wants(*x).then(|| vec![R::zero(); xd.len()]);
                    let mut col = vec![R::zero(); kk * p];
                    let mut dcol = vec![R::zero(); kk * p];
                    let il = geom.input_len();
                    for s in 0..n {
                        let go = &g[s * co * p..(s + 1) * co * p];
                        geom.im2col(&xd[s * il..(s + 1) * il], &mut col);
                        R::gemm(co, p, kk, R::one(), go, (p as isize, 1), &col, (1, p as isize), R::one(), &mut dw, (kk as isize, 1));
                        for (c, chunk) in go.chunks_exact(p).enumerate() {
                            db[c] += chunk.iter().copied().sum();
                        }
                        if let Some(dx) = dx.as_mut() {
                            R::gemm(kk, co, p, R::one(), wd, (1, kk as isize), go, (p as isize, 1), R::zero(), &mut dcol, (p as isize, 1));
                            geom.col2im(&dcol, &mut dx[s * il..(s + 1) * il]);
                        }
                    }
                    send.push((*w, dw));
                    send.push((*b, db));
                    if let Some(dx) = dx {
                        send.push((*x, dx));
                    }
                }
                Op::ConvT2d { x, w, b, geom } => {
                    let (ci, rows, p, olen) = (geom.spec.in_channels, geom.col_rows(), geom.positions(), geom.output_len());
                    let plane = geom.output[0] * geom.output[1];
                    let n = self.shape(*x)[0];
                    let (xd, wd) = (self.data(*x), self.data(*w));
                    let mut dw = vec![R::zero(); wd.len()];
                    let mut db = vec![R::zero(); geom.spec.out_channels];
                    let mut dx = wants(*x).then(|| vec![R::zero(); xd.len()]);
                    let mut dcol = vec![R::zero(); rows * p];
                    for s in 0..n {
                        let go = &g[s * olen..(s + 1) * olen];
                        for (c, chunk) in go.chunks_exact(plane).enumerate() {
                            db[c] += chunk.iter().copied().sum();
                        }
                        geom.gather(go, &mut dcol);
                        let xs = &xd[s * ci * p..(s + 1) * ci * p];
                        R::gemm(ci, p, rows, R::one(), xs, (p as isize, 1), &dcol, (1, p as isize), R::one(), &mut dw, (rows as isize, 1));
                        if let Some(dx) = dx.as_mut() {
                            R::gemm(ci, rows, p, R::one(), wd, (rows as isize, 1), &dcol, (p as isize, 1), R::zero(), &mut dx[s * ci * p..(s + 1) * ci * p], (p as isize, 1));
                        }
                    }
                    send.push((*w, dw));
                    send.push((*b, db));
                    if let Some(dx) = dx {
                        send.push((*x, dx));
                    }
                }
                Op::Linear { x, w, b } => {
                    let xs = self.shape(*x);
                    let (n, inp) = (xs[0], xs[1]);
                    let o = self.shape(*w)[0];
                    let (xd, wd) = (self.data(*x), self.data(*w));
                    let mut dw = vec![R::zero(); wd.len()];
                    R::gemm(o, n, inp, R::one(), &g, (1, o as isize), xd, (inp as isize, 1), R::zero(), &mut dw, (inp as isize, 1));
                    let mut db = vec![R::zero(); o];
                    for row in g.chunks_exact(o) {
                        db.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                    }
                    if wants(*x) {
                        let mut dx = vec![R::zero(); xd.len()];
                        R::gemm(n, o, inp, R::one(), &g, (o as isize, 1), wd, (inp as isize, 1), R::zero(), &mut dx, (inp as isize, 1));
                        send.push((*x, dx));
                    }
                    send.push((*w, dw));
                    send.push((*b, db));
                }
                Op::Gru { x, w, cache, dims } => {
                    let weights = GruWeights {
                        w_ih: self.data(w[0]),
                        w_hh: self.data(w[1]),
                        b_ih: self.data(w[2]),
                        b_hh: self.data(w[3]),
                    };
                    let gg = gru_backward(self.data(*x), y, &g, cache, dims, &weights);
                    send.push((w[0], gg.w_ih));
                    send.push((w[1], gg.w_hh));
                    send.push((w[2], gg.b_ih));
                    send.push((w[3], gg.b_hh));
                    if wants(*x) {
                        send.push((*x, gg.dx));
                    }
                }
                Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                    let xs = self.shape(*x);
                    let (n, c) = (xs[0], xs[1]);
                    let inner: usize = xs[2..].iter().product();
                    let idx = |s: usize, ch: usize, i: usize| (s * c + ch) * inner + i;
                    let gd = self.data(*gamma);
                    let mut dgamma = vec![R::zero(); c];
                    let mut dbeta = vec![R::zero(); c];
                    for s in 0..n {
                        for ch in 0..c {
                            for i in 0..inner {
                                let j = idx(s, ch, i);
                                dgamma[ch] += g[j] * xhat[j];
                                dbeta[ch] += g[j];
                            }
                        }
                    }
                    if wants(*x) {
                        let mut dx = vec![R::zero(); g.len()];
                        let m = R::of((n * inner) as f64);
                        for ch in 0..c {
                            let k = gd[ch] * inv_std[ch];
                            for s in 0..n {
                                for i in 0..inner {
                                    let j = idx(s, ch, i);
                                    dx[j] = if *batch_stats {
                                        k * (g[j] - dbeta[ch] / m - xhat[j] * dgamma[ch] / m)
                                    } else {
                                        k * g[j]
                                    };
                                }
                            }
                        }
                        send.push((*x, dx));
                    }
                    send.push((*gamma, dgamma));
                    send.push((*beta, dbeta));
                }
                Op::Relu(x) => {
                    let d = self.data(*x).iter().zip(&g).map(|(&v, &gv)| if v > R::zero() { gv } else { R::zero() }).collect();
                    send.push((*x, d));
                }
                Op::Tanh(x) => send.push((*x, y.iter().zip(&g).map(|(&t, &gv)| gv * (R::one() - t * t)).collect())),
                Op::Sigmoid(x) => send.push((*x, y.iter().zip(&g).map(|(&t, &gv)| gv * t * (R::one() - t)).collect())),
                Op::LogSoftmax(x) => {
                    let k = *self.shape(*x).last().expect("checked");
                    let mut d = g.clone();
                    for (row, yr) in d.chunks_exact_mut(k).zip(y.chunks_exact(k)) {
                        let s: R = row.iter().copied().sum();
                        row.iter_mut().zip(yr).for_each(|(gv, &lv)| *gv -= lv.exp() * s);
                    }
                    send.push((*x, d));
                }
                Op::Softmax(x) => {
                    let k = *self.shape(*x).last().expect("checked");
                    let mut d = g.clone();
                    for (row, yr) in d.chunks_exact_mut(k).zip(y.chunks_exact(k)) {
                        let s: R = row.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        row.iter_mut().zip(yr).for_each(|(gv, &p)| *gv = p * (*gv - s));
                    }
                    send.push((*x, d));
                }
                Op::Mask { x, mask } => send.push((*x, g.iter().zip(mask).map(|(&a, &b)| a * b).collect())),
                Op::Reshape(x) => send.push((*x, g)),
                Op::Add(a, b) => {
                    send.push((*a, g.clone()));
                    send.push((*b, g));
                }
                Op::Mul(a, b) => {
                    let (ad, bd) = (self.data(*a), self.data(*b));
                    send.push((*a, g.iter().zip(bd).map(|(&x, &y)| x * y).collect()));
                    send.push((*b, g.iter().zip(ad).map(|(&x, &y)| x * y).collect()));
                }
                Op::Sum(x) => send.push((*x, vec![g[0]; self.value(*x).numel()])),
                Op::Mse { x, target } => {
                    let xd = self.data(*x);
                    let scale = g[0] * R::of(2.0 / xd.len() as f64);
                    send.push((*x, xd.iter().zip(target).map(|(&a, &b)| scale * (a - b)).collect()));
                }
                Op::Ctc { x, grad } => send.push((*x, grad.iter().map(|&v| v * g[0]).collect())),
                Op::WeightedSum { terms, divisor } => {
                    for &(v, w) in terms {
                        send.push((v, vec![w * g[0] / *divisor]));
                    }
                }
            }
            for (v, d) in send {
                if self.nodes[v.0].needs_grad {
                    acc(&mut grads[v.0], d);
                }
            }
        }
        Ok(out)
    }
}

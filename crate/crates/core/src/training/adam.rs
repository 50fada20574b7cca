use crate::error::{Error, Result};
use crate::nn::{Gradients, ParamKind, ParamStore, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments exist for weights only; buffers
/// have empty placeholders so indices line up with the store.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<R> {
    pub cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<R>>,
    v: Vec<Vec<R>>,
}

impl<R: Real> Adam<R> {
    pub fn new(cfg: AdamConfig, store: &ParamStore<R>) -> Self {
        let zeros = |id| match store.kind(id) {
            ParamKind::Weight => vec![R::zero(); store.get(id).numel()],
            ParamKind::Buffer => Vec::new(),
        };
        Self {
            cfg,
            step: 0,
            m: store.ids().map(zeros).collect(),
            v: store.ids().map(zeros).collect(),
        }
    }

    /// Restores a saved optimizer state.
    pub fn from_state(cfg: AdamConfig, step: u64, m: Vec<Vec<R>>, v: Vec<Vec<R>>, store: &ParamStore<R>) -> Result<Self> {
        let fresh = Self::new(cfg, store);
        let fits = |a: &[Vec<R>]| a.len() == fresh.m.len() && a.iter().zip(&fresh.m).all(|(x, y)| x.len() == y.len());
        if !fits(&m) || !fits(&v) {
            return Err(Error::ConfigMismatch("optimizer state does not match the parameters".into()));
        }
        Ok(Self { cfg, step, m, v })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<R>], &[Vec<R>]) {
        (&self.m, &self.v)
    }

    /// One update. Parameters the loss did not reach are left alone.
    /// A non-finite gradient aborts before anything is modified.
    pub fn step(&mut self, store: &mut ParamStore<R>, grads: &Gradients<R>) -> Result<()> {
        for id in store.ids() {
            if let Some(g) = grads.get(id) {
                if let Some(i) = g.data().iter().position(|x| !x.is_finite()) {
                    return Err(Error::Numerical(format!(
                        "non-finite gradient in {} at element {i}",
                        store.name(id)
                    )));
                }
            }
        }
        self.step += 1;
        let c = self.cfg;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (R::of(c.beta1), R::of(c.beta2));
        let (one, eps) = (R::one(), R::of(c.eps));
        let step_size = R::of(c.learning_rate / bc1);
        let inv_bc2 = R::of(1.0 / bc2);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            if store.kind(id) != ParamKind::Weight {
                continue;
            }
            let Some(g) = grads.get(id) else { continue };
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let p: &mut Tensor<R> = store.get_mut(id);
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *p -= step_size * *m / ((*v * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

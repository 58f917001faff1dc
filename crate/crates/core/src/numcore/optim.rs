use serde::{Deserialize, Serialize};

use super::{ParamStore, Real, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// AdamW with bias correction. Moments are keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<R> {
    pub cfg: AdamConfig,
    pub step: u64,
    m: ParamStore<R>,
    v: ParamStore<R>,
}

impl<R: Real> Adam<R> {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            step: 0,
            m: ParamStore::new(),
            v: ParamStore::new(),
        }
    }

    /// Applies one update. Parameters without a gradient entry are untouched.
    pub fn update(&mut self, params: &mut ParamStore<R>, grads: &ParamStore<R>) -> Result<()> {
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (R::c(c.beta1), R::c(c.beta2));
        let lr = R::c(c.lr);
        let wd = R::c(c.weight_decay);
        let (bc1, bc2) = (R::c(bc1), R::c(bc2));
        let eps = R::c(c.eps);
        for (name, g) in grads.iter() {
            let p = params.get_mut(name)?;
            if self.m.get(name).is_err() {
                self.m.insert(name.clone(), Tensor::zeros(p.shape()));
                self.v.insert(name.clone(), Tensor::zeros(p.shape()));
            }
            let m = self.m.get_mut(name)?.data_mut();
            let v = self.v.get_mut(name)?.data_mut();
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + (R::one() - b1) * gi;
                *vi = b2 * *vi + (R::one() - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi -= lr * (mhat / (vhat.sqrt() + eps) + wd * *pi);
            }
        }
        Ok(())
    }

    pub fn moments(&self) -> (&ParamStore<R>, &ParamStore<R>) {
        (&self.m, &self.v)
    }

    pub fn from_parts(cfg: AdamConfig, step: u64, m: ParamStore<R>, v: ParamStore<R>) -> Self {
        Self { cfg, step, m, v }
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<R: Real>(grads: &mut ParamStore<R>, max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|(_, t)| t.data().iter())
        .map(|x| {
            let x = x.to_f64().unwrap();
            x * x
        })
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = R::c(max_norm / norm);
        for (_, t) in grads.iter_mut() {
            t.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

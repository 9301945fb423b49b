//! First-order optimizers over [`ParamSet`]s.

use super::ParamSet;

pub fn sgd_step<P: ParamSet, G: ParamSet>(params: &mut P, grads: &G, lr: f64) {
    for ((_, p), (_, g)) in params.tensors_mut().into_iter().zip(grads.tensors()) {
        for (w, d) in p.iter_mut().zip(g) {
            *w -= lr * d;
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn step<P: ParamSet, G: ParamSet>(&mut self, params: &mut P, grads: &G) {
        let n = params.param_count();
        if self.m.len() != n {
            self.m = vec![0.0; n];
            self.v = vec![0.0; n];
            self.t = 0;
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let mut k = 0;
        for ((_, p), (_, g)) in params.tensors_mut().into_iter().zip(grads.tensors()) {
            for (w, &d) in p.iter_mut().zip(g) {
                self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * d;
                self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * d * d;
                *w -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + self.eps);
                k += 1;
            }
        }
    }
}

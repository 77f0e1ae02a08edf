use crate::params::{ParamId, ParamStore};

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(store: &ParamStore, beta1: f64, beta2: f64) -> Self {
        let zeros = || store.iter().map(|(_, _, t)| vec![0.0f32; t.len()]).collect::<Vec<_>>();
        Self {
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Applies one update with learning rate `lr`. Parameters absent from
    /// `grads` keep their value and moments.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Vec<f32>)], lr: f64) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let step_size = (lr / c1) as f32;
        let (b1, b2, eps, c2) = (b1 as f32, b2 as f32, self.eps as f32, c2 as f32);
        for (id, g) in grads {
            let i = id.index();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = store.get_mut(*id).data_mut();
            for k in 0..g.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                p[k] -= step_size * m[k] / ((v[k] / c2).sqrt() + eps);
            }
        }
    }
}

/// Step decay: `lr = base · gamma^⌊epoch / every⌋`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLr {
    pub base: f64,
    pub every: usize,
    pub gamma: f64,
}

impl StepLr {
    pub fn lr(&self, epoch: usize) -> f64 {
        self.base * self.gamma.powi((epoch / self.every.max(1)) as i32)
    }
}

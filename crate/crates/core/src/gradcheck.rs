//! Central-difference gradient checking in `f64`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Outcome of a gradient check.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(|numeric|, 1e-6)` over smooth elements.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Elements where the central difference straddles a kink (ReLU, max,
    /// |·|) and a one-sided difference agrees with the analytic gradient.
    pub nonsmooth: usize,
}

impl GradCheckReport {
    fn merge(&mut self, rel: f64, kink: bool) {
        self.checked += 1;
        if kink {
            self.nonsmooth += 1;
        } else {
            self.max_rel_error = self.max_rel_error.max(rel);
        }
    }
}

/// Relative error denominator floor.
pub const REL_FLOOR: f64 = 1e-6;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(REL_FLOOR)
}

/// Gradient-check configuration.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub eps: f64,
    /// When set, central-difference failures above this tolerance whose
    /// one-sided difference matches are counted as non-smooth instead.
    pub kink_tolerance: Option<f64>,
    /// Number of parameter elements sampled per check (`None` = all).
    pub param_samples: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            kink_tolerance: None,
            param_samples: None,
            seed: 0,
        }
    }
}

type Loss<'f> = dyn Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var> + 'f;

fn evaluate(f: &Loss<'_>, params: Option<&ParamStore<f64>>, inputs: &[Tensor<f64>]) -> Result<f64> {
    let mut g = match params {
        Some(p) => Graph::with_params(p),
        None => Graph::new(),
    };
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.value(loss).item()
}

impl GradCheck {
    pub fn with_eps(eps: f64) -> Self {
        Self {
            eps,
            ..Self::default()
        }
    }

    /// Checks the gradient of the scalar `f` with respect to every input
    /// element and (sampled) parameter element.
    pub fn run<F>(&self, f: F, params: Option<&ParamStore<f64>>, inputs: &[Tensor<f64>]) -> Result<GradCheckReport>
    where
        F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
    {
        if !(self.eps > 0.0) {
            return Err(Error::config("gradient check step must be positive"));
        }
        let f: &Loss<'_> = &f;

        let (input_grads, param_grads) = {
            let mut g = match params {
                Some(p) => Graph::with_params(p),
                None => Graph::new(),
            };
            let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
            let loss = f(&mut g, &vars)?;
            g.backward(loss)?;
            let ig: Vec<Vec<f64>> = vars
                .iter()
                .zip(inputs)
                .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.len()], Tensor::into_data))
                .collect();
            let pg: Vec<(ParamId, Vec<f64>)> = g.param_grads().into_iter().map(|(id, s)| (id, s.to_vec())).collect();
            (ig, pg)
        };
        let base = evaluate(f, params, inputs)?;

        let mut report = GradCheckReport::default();
        let mut work: Vec<Tensor<f64>> = inputs.to_vec();
        for (ti, grads) in input_grads.iter().enumerate() {
            for e in 0..work[ti].len() {
                let orig = work[ti].data()[e];
                work[ti].data_mut()[e] = orig + self.eps;
                let plus = evaluate(f, params, &work)?;
                work[ti].data_mut()[e] = orig - self.eps;
                let minus = evaluate(f, params, &work)?;
                work[ti].data_mut()[e] = orig;
                let (rel, kink) = self.judge(grads[e], base, plus, minus);
                report.merge(rel, kink);
            }
        }

        if let Some(store) = params {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            let all: Vec<(ParamId, usize)> = store
                .ids()
                .flat_map(|id| (0..store.get(id).len()).map(move |e| (id, e)))
                .collect();
            let picks: Vec<usize> = match self.param_samples {
                Some(k) if k < all.len() => sample(&mut rng, all.len(), k).into_vec(),
                _ => (0..all.len()).collect(),
            };
            let mut perturbed = store.clone();
            for i in picks {
                let (id, e) = all[i];
                let analytic = param_grads
                    .iter()
                    .find(|(pid, _)| *pid == id)
                    .map_or(0.0, |(_, g)| g[e]);
                let orig = store.get(id).data()[e];
                perturbed.get_mut(id).data_mut()[e] = orig + self.eps;
                let plus = evaluate(f, Some(&perturbed), inputs)?;
                perturbed.get_mut(id).data_mut()[e] = orig - self.eps;
                let minus = evaluate(f, Some(&perturbed), inputs)?;
                perturbed.get_mut(id).data_mut()[e] = orig;
                let (rel, kink) = self.judge(analytic, base, plus, minus);
                report.merge(rel, kink);
            }
        }
        Ok(report)
    }

    fn judge(&self, analytic: f64, base: f64, plus: f64, minus: f64) -> (f64, bool) {
        let central = (plus - minus) / (2.0 * self.eps);
        let rel = rel_err(analytic, central);
        match self.kink_tolerance {
            Some(tol) if rel > tol => {
                let fwd = (plus - base) / self.eps;
                let bwd = (base - minus) / self.eps;
                let one_sided = rel_err(analytic, fwd).min(rel_err(analytic, bwd));
                (rel, one_sided <= 1e-2)
            }
            _ => (rel, false),
        }
    }
}

/// Maximum relative error of the gradient of `f` with respect to `inputs`.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    Ok(GradCheck::with_eps(eps).run(f, None, inputs)?.max_rel_error)
}

/// Fixed pseudo-random weights for reducing a non-scalar output to a scalar.
pub fn probe_weights(n: usize, seed: u64) -> Vec<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

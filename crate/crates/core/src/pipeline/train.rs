use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::backbone::{checkpoint, Model};
use crate::error::{Error, Result};
use crate::kv;
use crate::params::ParamId;

use super::data::Sample;
use super::optim::{Adam, StepLr};

/// Optimiser and schedule settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// StepLR period in epochs.
    pub step_every: usize,
    pub step_gamma: f64,
    pub epochs: usize,
    /// Samples whose gradients are averaged per update.
    pub batch: usize,
    pub seed: u64,
    /// Stops after this many updates even if epochs remain.
    pub max_iters: Option<usize>,
    /// Writes `checkpoint.mfmb` every this many updates (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            step_every: 10,
            step_gamma: 0.5,
            epochs: 32,
            batch: 1,
            seed: 10,
            max_iters: None,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.step_gamma > 0.0 && self.step_gamma < 1.0) {
            return Err(Error::config(format!("step_gamma must lie in (0, 1), got {}", self.step_gamma)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("Adam betas must lie in [0, 1)"));
        }
        if self.batch == 0 || self.epochs == 0 || self.step_every == 0 {
            return Err(Error::config("batch, epochs and step_every must be positive"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> StepLr {
        StepLr {
            base: self.lr,
            every: self.step_every,
            gamma: self.step_gamma,
        }
    }

    /// Applies one `key = value` setting. Returns `false` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "lr" => self.lr = kv::parse_value(key, value)?,
            "beta1" => self.beta1 = kv::parse_value(key, value)?,
            "beta2" => self.beta2 = kv::parse_value(key, value)?,
            "step_every" => self.step_every = kv::parse_value(key, value)?,
            "step_gamma" => self.step_gamma = kv::parse_value(key, value)?,
            "epochs" => self.epochs = kv::parse_value(key, value)?,
            "batch" => self.batch = kv::parse_value(key, value)?,
            "seed" => self.seed = kv::parse_value(key, value)?,
            "max_iters" => {
                let n: usize = kv::parse_value(key, value)?;
                self.max_iters = (n > 0).then_some(n);
            }
            "checkpoint_every" => self.checkpoint_every = kv::parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Outcome of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// `(iteration, mean L1 of the update's samples)`, iterations counted from 1.
    pub curve: Vec<(usize, f64)>,
    /// Mean L1 over the training set before the first update.
    pub initial_l1: f64,
    /// Mean L1 over the training set after the last update.
    pub final_l1: f64,
}

impl TrainReport {
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("iteration,l1\n");
        for (i, l) in &self.curve {
            let _ = writeln!(s, "{i},{l:.9}");
        }
        s
    }
}

/// L1 loss and parameter gradients of one sample.
pub fn loss_and_grads(model: &Model, sample: &Sample) -> Result<(f64, Vec<(ParamId, Vec<f32>)>)> {
    let mut g = Graph::with_params(&model.params);
    let x = g.input(sample.input.clone());
    let target = g.input(sample.target.clone());
    let pred = model.forward(&mut g, x)?;
    let loss = g.l1_loss(pred, target)?;
    let value = g.value(loss).item()? as f64;
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    g.backward(loss)?;
    let grads = g.param_grads().into_iter().map(|(id, s)| (id, s.to_vec())).collect();
    Ok((value, grads))
}

/// Mean L1 of the model over `data`, without gradients.
pub fn mean_l1(model: &Model, data: &[Sample]) -> Result<f64> {
    let mut total = 0.0;
    for s in data {
        let pred = model.infer(&s.input)?;
        total += crate::ops::l1_loss(&pred, &s.target)? as f64;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Trains `model` in place with Adam and StepLR. Sample order is shuffled per
/// epoch from `tc.seed`, so equal inputs reproduce the run bit for bit.
/// With `out`, writes `loss.csv`, periodic `checkpoint.mfmb` and a final `model.mfmb`.
pub fn train(model: &mut Model, data: &[Sample], tc: &TrainConfig, out: Option<&Path>) -> Result<TrainReport> {
    tc.validate()?;
    if data.is_empty() {
        return Err(Error::EmptySplit("training data".into()));
    }
    for s in data {
        let spec = model.check_input(s.input.shape())?;
        let expect = [1, spec.out_channels, spec.output_size, spec.output_size];
        if s.target.shape().dims() != expect {
            return Err(Error::config(format!(
                "sample {} target is {}, {} expects {:?}",
                s.id,
                s.target.shape(),
                model.cfg.task,
                expect
            )));
        }
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }

    let schedule = tc.schedule();
    let mut adam = Adam::new(&model.params, tc.beta1, tc.beta2);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let initial_l1 = mean_l1(model, data)?;
    let mut curve = Vec::new();
    let mut iteration = 0usize;

    'epochs: for epoch in 0..tc.epochs {
        let lr = schedule.lr(epoch);
        order.shuffle(&mut rng);
        for chunk in order.chunks(tc.batch) {
            iteration += 1;
            let mut sum: Vec<(ParamId, Vec<f32>)> = Vec::new();
            let mut loss = 0.0;
            for &i in chunk {
                let (l, grads) = loss_and_grads(model, &data[i])?;
                if !l.is_finite() {
                    return Err(Error::NonFiniteLoss { iteration });
                }
                loss += l;
                if sum.is_empty() {
                    sum = grads;
                } else {
                    for ((_, acc), (_, g)) in sum.iter_mut().zip(&grads) {
                        acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                    }
                }
            }
            let n = chunk.len() as f32;
            if n > 1.0 {
                sum.iter_mut().for_each(|(_, g)| g.iter_mut().for_each(|v| *v /= n));
            }
            adam.step(&mut model.params, &sum, lr);
            let loss = loss / chunk.len() as f64;
            curve.push((iteration, loss));
            log::debug!("epoch {epoch} iteration {iteration} lr {lr:.3e} l1 {loss:.6}");

            if let Some(dir) = out {
                if tc.checkpoint_every > 0 && iteration % tc.checkpoint_every == 0 {
                    checkpoint::save(model, &dir.join("checkpoint.mfmb"))?;
                }
            }
            if tc.max_iters.is_some_and(|m| iteration >= m) {
                break 'epochs;
            }
        }
        log::info!("epoch {epoch}: lr {lr:.3e}, last l1 {:.6}", curve.last().map_or(f64::NAN, |c| c.1));
    }

    let final_l1 = mean_l1(model, data)?;
    if !final_l1.is_finite() {
        return Err(Error::NonFiniteLoss { iteration });
    }
    let report = TrainReport {
        curve,
        initial_l1,
        final_l1,
    };
    if let Some(dir) = out {
        fs::write(dir.join("loss.csv"), report.curve_csv())?;
        checkpoint::save(model, &dir.join("model.mfmb"))?;
    }
    Ok(report)
}

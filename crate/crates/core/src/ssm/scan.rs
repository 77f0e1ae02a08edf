//! The discrete linear recurrence `h_τ = Ā h_{τ−1} + B̄ x_τ`, `y_τ = C h_τ + D x_τ`.

use rayon::prelude::*;

use super::zoh::{discretize, DiscreteSsm, ZohMode};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Continuous parameters of a single-channel diagonal SSM over a sequence.
///
/// `A = −exp(a_log)` keeps every diagonal entry strictly negative.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmParams<T: Scalar = f32> {
    pub a_log: Vec<T>,
    /// `L × M`, one input vector per step.
    pub b: Vec<T>,
    /// `L × M`, one readout vector per step.
    pub c: Vec<T>,
    pub d: T,
    /// `L` positive time steps.
    pub delta: Vec<T>,
}

impl<T: Scalar> SsmParams<T> {
    pub fn state_size(&self) -> usize {
        self.a_log.len()
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    pub fn a(&self) -> Vec<T> {
        self.a_log.iter().map(|&v| -v.exp()).collect()
    }

    pub fn discretize(&self, mode: ZohMode) -> Result<DiscreteSsm<T>> {
        discretize(&self.a(), &self.b, &self.delta, mode)
    }

    /// Discretises and runs [`scan_recurrence`] over `x`.
    pub fn run(&self, x: &[T], mode: ZohMode) -> Result<Vec<T>> {
        let d = self.discretize(mode)?;
        scan_recurrence(x, &d, &self.c, self.d)
    }
}

fn check_inputs<T: Scalar>(x: &[T], d: &DiscreteSsm<T>, c: &[T]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::config("scan over an empty sequence"));
    }
    if x.len() != d.len || c.len() != d.len * d.state {
        return Err(Error::config(format!(
            "scan: sequence of {} steps, discrete system of {} steps, readout of {} entries (state {})",
            x.len(),
            d.len,
            c.len(),
            d.state
        )));
    }
    Ok(())
}

/// Reference loop, one step at a time from `h₀ = 0`.
pub fn scan_recurrence<T: Scalar>(x: &[T], d: &DiscreteSsm<T>, c: &[T], skip: T) -> Result<Vec<T>> {
    check_inputs(x, d, c)?;
    let m = d.state;
    let mut h = vec![T::zero(); m];
    let mut y = Vec::with_capacity(x.len());
    for (t, &xt) in x.iter().enumerate() {
        let mut acc = T::zero();
        for j in 0..m {
            let k = t * m + j;
            h[j] = d.a_bar[k] * h[j] + d.b_bar[k] * xt;
            acc += c[k] * h[j];
        }
        y.push(acc + skip * xt);
    }
    Ok(y)
}

/// Steps per block in [`scan_recurrence_fast`].
pub const SCAN_BLOCK: usize = 16;

/// Block-decomposed scan.
///
/// Each block is first summarised as the affine map `h ↦ P h + r` it applies
/// to the incoming state (`P` the product of its `Ā`, `r` its zero-state
/// response). Block summaries compose associatively; a sequential pass over
/// the summaries yields every block's incoming state, and the blocks are then
/// replayed independently. The first and last pass run in parallel.
pub fn scan_recurrence_fast<T: Scalar>(x: &[T], d: &DiscreteSsm<T>, c: &[T], skip: T) -> Result<Vec<T>> {
    check_inputs(x, d, c)?;
    let m = d.state;
    let len = x.len();
    let blocks = len.div_ceil(SCAN_BLOCK);

    let summaries: Vec<(Vec<T>, Vec<T>)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let (lo, hi) = (b * SCAN_BLOCK, ((b + 1) * SCAN_BLOCK).min(len));
            let mut prod = vec![T::one(); m];
            let mut resp = vec![T::zero(); m];
            for t in lo..hi {
                let row = t * m;
                let xt = x[t];
                for j in 0..m {
                    let a = d.a_bar[row + j];
                    prod[j] *= a;
                    resp[j] = a * resp[j] + d.b_bar[row + j] * xt;
                }
            }
            (prod, resp)
        })
        .collect();

    let mut carries = Vec::with_capacity(blocks);
    let mut h = vec![T::zero(); m];
    for (prod, resp) in &summaries {
        carries.push(h.clone());
        for j in 0..m {
            h[j] = prod[j] * h[j] + resp[j];
        }
    }

    let mut y = vec![T::zero(); len];
    y.par_chunks_mut(SCAN_BLOCK)
        .zip(carries.into_par_iter())
        .enumerate()
        .for_each(|(b, (out, mut h))| {
            let lo = b * SCAN_BLOCK;
            for (i, yt) in out.iter_mut().enumerate() {
                let t = lo + i;
                let row = t * m;
                let xt = x[t];
                let mut acc = T::zero();
                for j in 0..m {
                    h[j] = d.a_bar[row + j] * h[j] + d.b_bar[row + j] * xt;
                    acc += c[row + j] * h[j];
                }
                *yt = acc + skip * xt;
            }
        });
    Ok(y)
}

/// Hidden-state trajectory of the reference loop, `L × M`.
pub fn scan_states<T: Scalar>(x: &[T], d: &DiscreteSsm<T>) -> Result<Vec<T>> {
    if x.len() != d.len {
        return Err(Error::config("scan_states: length mismatch"));
    }
    let m = d.state;
    let mut h = vec![T::zero(); m];
    let mut out = Vec::with_capacity(d.len * m);
    for (t, &xt) in x.iter().enumerate() {
        for j in 0..m {
            let k = t * m + j;
            h[j] = d.a_bar[k] * h[j] + d.b_bar[k] * xt;
        }
        out.extend_from_slice(&h);
    }
    Ok(out)
}

/// Gradients of a scalar loss with respect to the inputs of [`scan_recurrence`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScanGrads<T: Scalar> {
    pub x: Vec<T>,
    pub a_bar: Vec<T>,
    pub b_bar: Vec<T>,
    pub c: Vec<T>,
    pub skip: T,
}

/// Reverse-mode pass of [`scan_recurrence`] given the output gradient `gy`.
pub fn scan_recurrence_backward<T: Scalar>(
    x: &[T],
    d: &DiscreteSsm<T>,
    c: &[T],
    skip: T,
    gy: &[T],
) -> Result<ScanGrads<T>> {
    check_inputs(x, d, c)?;
    if gy.len() != x.len() {
        return Err(Error::config("scan_recurrence_backward: output gradient length mismatch"));
    }
    let m = d.state;
    let h = scan_states(x, d)?;
    let mut g = ScanGrads {
        x: vec![T::zero(); x.len()],
        a_bar: vec![T::zero(); d.len * m],
        b_bar: vec![T::zero(); d.len * m],
        c: vec![T::zero(); d.len * m],
        skip: T::zero(),
    };
    let mut carry = vec![T::zero(); m];
    for t in (0..x.len()).rev() {
        let (xt, gt) = (x[t], gy[t]);
        g.skip += gt * xt;
        let mut gx = skip * gt;
        for j in 0..m {
            let k = t * m + j;
            g.c[k] = gt * h[k];
            let gh = carry[j] + c[k] * gt;
            let prev = if t > 0 { h[k - m] } else { T::zero() };
            g.a_bar[k] = gh * prev;
            g.b_bar[k] = gh * xt;
            gx += gh * d.b_bar[k];
            carry[j] = gh * d.a_bar[k];
        }
        g.x[t] = gx;
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_of_one_step() {
        // y = c·(b̄·x) + s·x
        let d = DiscreteSsm::constant(1, &[0.5f64], &[2.0]).unwrap();
        let g = scan_recurrence_backward(&[3.0], &d, &[4.0], 0.5, &[1.0]).unwrap();
        assert_eq!((g.x[0], g.b_bar[0], g.c[0], g.a_bar[0], g.skip), (8.5, 12.0, 6.0, 0.0, 3.0));
    }

    #[test]
    fn memoryless_passthrough() {
        let x = [0.5f64, -1.0, 2.0];
        let d = DiscreteSsm::constant(3, &[0.0], &[1.0]).unwrap();
        assert_eq!(scan_recurrence(&x, &d, &[1.0; 3], 0.0).unwrap(), x.to_vec());
    }

    #[test]
    fn three_step_decay() {
        let d = DiscreteSsm::constant(3, &[0.5f64], &[1.0]).unwrap();
        let y = scan_recurrence(&[1.0, 1.0, 1.0], &d, &[1.0; 3], 0.0).unwrap();
        assert_eq!(y, vec![1.0, 1.5, 1.75]);
        assert_eq!(scan_states(&[1.0, 1.0, 1.0], &d).unwrap(), vec![1.0, 1.5, 1.75]);
    }

    #[test]
    fn zero_input_zero_output() {
        let d = DiscreteSsm::constant(40, &[0.9f32, 0.2], &[1.0, -3.0]).unwrap();
        let c = vec![1.0f32; 80];
        let y = scan_recurrence_fast(&[0.0; 40], &d, &c, 2.0).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_matches() {
        let d = DiscreteSsm::constant(1, &[0.3f64, 0.7], &[1.5, -0.5]).unwrap();
        let c = [0.25, 2.0];
        assert_eq!(
            scan_recurrence(&[1.25], &d, &c, 0.5).unwrap(),
            scan_recurrence_fast(&[1.25], &d, &c, 0.5).unwrap()
        );
    }

    #[test]
    fn length_mismatch_is_config_error() {
        let d = DiscreteSsm::constant(3, &[0.5f64], &[1.0]).unwrap();
        assert!(scan_recurrence(&[1.0, 2.0], &d, &[1.0; 3], 0.0).is_err());
        assert!(scan_recurrence_fast(&[1.0, 2.0, 3.0], &d, &[1.0; 2], 0.0).is_err());
    }

    #[test]
    fn state_stays_bounded() {
        // |h| ≤ |B̄| max|x| / (1 − Ā) for a stable time-invariant system.
        let (a, b) = (0.999f64, 0.7);
        let len = 10_000;
        let x: Vec<f64> = (0..len).map(|t| ((t * 7919) % 13) as f64 / 6.0 - 1.0).collect();
        let xmax = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let d = DiscreteSsm::constant(len, &[a], &[b]).unwrap();
        let bound = b.abs() * xmax / (1.0 - a);
        let h = scan_states(&x, &d).unwrap();
        assert!(h.iter().all(|v| v.abs() <= bound * (1.0 + 1e-12)));
    }
}

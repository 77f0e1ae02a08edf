//! Zero-order-hold discretisation of a diagonal state-space model.

use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Below this `|ΔA|` the ratio `(e^z - 1) / z` is evaluated by its Taylor series.
pub const TAYLOR_THRESHOLD: f64 = 1e-4;

/// Which input-matrix discretisation to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum ZohMode {
    /// `B̄ = (ΔA)⁻¹ (exp(ΔA) − I) ΔB`.
    #[default]
    Standard,
    /// `B̄ = (ΔA)⁻¹ (exp(A) − I) ΔB`, i.e. `exp(A)` without the step size,
    /// a literal variant kept for comparison.
    PrintedExpA,
}

/// `(e^z - 1) / z`, continuous at `z = 0`.
#[inline]
pub fn expm1_ratio<T: Scalar>(z: T) -> T {
    if z.abs() < T::lit(TAYLOR_THRESHOLD) {
        // 1 + z/2 + z²/6 + z³/24; the next term is below 1e-18 here.
        T::one() + z * (T::lit(0.5) + z * (T::lit(1.0 / 6.0) + z * T::lit(1.0 / 24.0)))
    } else {
        z.exp_m1() / z
    }
}

/// Derivative of [`expm1_ratio`]: `(z e^z − e^z + 1) / z²`.
#[inline]
pub fn expm1_ratio_deriv<T: Scalar>(z: T) -> T {
    if z.abs() < T::lit(0.1) {
        // Σ z^n (n + 1) / (n + 2)!
        let coeffs = [
            1.0 / 2.0,
            1.0 / 3.0,
            1.0 / 8.0,
            1.0 / 30.0,
            1.0 / 144.0,
            1.0 / 840.0,
            1.0 / 5760.0,
            1.0 / 45360.0,
        ];
        coeffs
            .iter()
            .rev()
            .fold(T::zero(), |acc, &c| acc * z + T::lit(c))
    } else {
        let e = z.exp();
        (z * e - z.exp_m1()) / (z * z)
    }
}

/// Discretised `(Ā, B̄)` for one diagonal entry and one step.
///
/// `b` is the continuous input coefficient; the returned `B̄` already includes it.
pub fn zoh_scalar<T: Scalar>(a: T, b: T, delta: T, mode: ZohMode) -> Result<(T, T)> {
    check_delta(delta)?;
    let z = delta * a;
    let a_bar = z.exp();
    Ok((a_bar, input_coefficient(a, delta, mode) * b))
}

/// `B̄ / B` for one diagonal entry.
#[inline]
pub(crate) fn input_coefficient<T: Scalar>(a: T, delta: T, mode: ZohMode) -> T {
    match mode {
        ZohMode::Standard => delta * expm1_ratio(delta * a),
        ZohMode::PrintedExpA => expm1_ratio(a),
    }
}

fn check_delta<T: Scalar>(delta: T) -> Result<()> {
    if !(delta > T::zero()) || !delta.is_finite() {
        return Err(Error::config(format!(
            "time step must be positive and finite, got {delta}"
        )));
    }
    Ok(())
}

/// Per-step discretised parameters for a single channel, `L × M` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSsm<T: Scalar = f32> {
    pub len: usize,
    pub state: usize,
    pub a_bar: Vec<T>,
    pub b_bar: Vec<T>,
}

impl<T: Scalar> DiscreteSsm<T> {
    pub fn new(len: usize, state: usize, a_bar: Vec<T>, b_bar: Vec<T>) -> Result<Self> {
        if a_bar.len() != len * state || b_bar.len() != len * state {
            return Err(Error::config(format!(
                "discrete SSM buffers must hold {len}x{state} entries"
            )));
        }
        Ok(Self {
            len,
            state,
            a_bar,
            b_bar,
        })
    }

    /// Time-invariant system: the same `(Ā, B̄)` at every step.
    pub fn constant(len: usize, a_bar: &[T], b_bar: &[T]) -> Result<Self> {
        if a_bar.len() != b_bar.len() {
            return Err(Error::config("Ā and B̄ state sizes differ"));
        }
        Self::new(len, a_bar.len(), a_bar.repeat(len), b_bar.repeat(len))
    }
}

/// Discretises a diagonal system.
///
/// `a` holds the `M` diagonal entries, `b` the per-step input vectors (`L × M`)
/// and `delta` the per-step time steps (`L`).
pub fn discretize<T: Scalar>(a: &[T], b: &[T], delta: &[T], mode: ZohMode) -> Result<DiscreteSsm<T>> {
    let m = a.len();
    let len = delta.len();
    if m == 0 || len == 0 {
        return Err(Error::config("discretize needs at least one state and one step"));
    }
    if b.len() != len * m {
        return Err(Error::config(format!(
            "B must hold {len}x{m} entries, got {}",
            b.len()
        )));
    }
    let mut a_bar = Vec::with_capacity(len * m);
    let mut b_bar = Vec::with_capacity(len * m);
    for (t, &dt) in delta.iter().enumerate() {
        for (j, &aj) in a.iter().enumerate() {
            let (ab, bb) = zoh_scalar(aj, b[t * m + j], dt, mode)?;
            a_bar.push(ab);
            b_bar.push(bb);
        }
    }
    DiscreteSsm::new(len, m, a_bar, b_bar)
}

/// Gradients of a scalar loss with respect to the inputs of [`discretize`].
#[derive(Clone, Debug, PartialEq)]
pub struct DiscretizeGrads<T: Scalar> {
    pub a: Vec<T>,
    pub b: Vec<T>,
    pub delta: Vec<T>,
}

/// Reverse-mode pass of [`discretize`] given the gradients of `Ā` and `B̄`.
pub fn discretize_backward<T: Scalar>(
    a: &[T],
    b: &[T],
    delta: &[T],
    mode: ZohMode,
    g_a_bar: &[T],
    g_b_bar: &[T],
) -> Result<DiscretizeGrads<T>> {
    let (m, len) = (a.len(), delta.len());
    if b.len() != len * m || g_a_bar.len() != len * m || g_b_bar.len() != len * m {
        return Err(Error::config(format!("discretize_backward expects {len}x{m} buffers")));
    }
    let mut g = DiscretizeGrads {
        a: vec![T::zero(); m],
        b: vec![T::zero(); len * m],
        delta: vec![T::zero(); len],
    };
    for (t, &dt) in delta.iter().enumerate() {
        check_delta(dt)?;
        for (j, &aj) in a.iter().enumerate() {
            let k = t * m + j;
            let a_bar = (dt * aj).exp();
            let coef = input_coefficient(aj, dt, mode);
            // coef = Δ·r(Δa) has ∂/∂Δ = exp(Δa) and ∂/∂a = Δ²·r'(Δa).
            let (dc_ddt, dc_da) = match mode {
                ZohMode::Standard => (a_bar, dt * dt * expm1_ratio_deriv(dt * aj)),
                ZohMode::PrintedExpA => (T::zero(), expm1_ratio_deriv(aj)),
            };
            let (ga, gb) = (g_a_bar[k], g_b_bar[k]);
            g.b[k] = gb * coef;
            g.delta[t] += ga * aj * a_bar + gb * b[k] * dc_ddt;
            g.a[j] += ga * dt * a_bar + gb * b[k] * dc_da;
        }
    }
    Ok(g)
}

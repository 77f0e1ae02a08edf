//! Named parameter storage and seeded initialisation.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Handle to a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Scalar = f32> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    lookup: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter name {name}")));
        }
        let id = self.values.len();
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(id))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied().map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            lookup: self.lookup.clone(),
        }
    }
}

/// Slope giving convolution kernels the bound `1 / sqrt(fan_in)`.
pub const CONV_INIT_SLOPE: f64 = 2.236_067_977_499_79;

/// Deterministic parameter initialiser.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, shape: impl Into<Shape>, lo: f64, hi: f64) -> Tensor<f32> {
        let shape = shape.into();
        let data = (0..shape.numel())
            .map(|_| self.rng.gen_range(lo..hi) as f32)
            .collect();
        Tensor::from_vec(shape, data).expect("length matches shape")
    }

    /// Kaiming-uniform over the fan-in for a leaky-ReLU slope `a`:
    /// `U(-b, b)` with `b = sqrt(6 / ((1 + a²) · fan_in))`.
    ///
    /// `a = 0` is the plain ReLU gain; [`CONV_INIT_SLOPE`] gives the common
    /// `b = 1 / sqrt(fan_in)` convolution default.
    pub fn kaiming_uniform(&mut self, shape: impl Into<Shape>, fan_in: usize, a: f64) -> Tensor<f32> {
        let b = (6.0 / ((1.0 + a * a) * fan_in.max(1) as f64)).sqrt();
        self.uniform(shape, -b, b)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.insert("a", Tensor::zeros([1, 1, 1, 1])).unwrap();
        assert!(s.insert("a", Tensor::zeros([1, 1, 1, 1])).is_err());
        assert_eq!(s.find("a"), Some(ParamId(0)));
    }

    #[test]
    fn initializer_is_seeded() {
        let a = Initializer::new(10).kaiming_uniform([4, 3, 3, 3], 27, 0.0);
        let b = Initializer::new(10).kaiming_uniform([4, 3, 3, 3], 27, 0.0);
        let c = Initializer::new(11).kaiming_uniform([4, 3, 3, 3], 27, 0.0);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = (6.0f32 / 27.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= bound));
        assert!(a.data().iter().any(|v| v.abs() > 0.8 * bound));
    }

    #[test]
    fn conv_slope_gives_inverse_sqrt_fan_in() {
        assert!((CONV_INIT_SLOPE - 5f64.sqrt()).abs() < 1e-12);
        let w = Initializer::new(3).kaiming_uniform([8, 4, 3, 3], 36, CONV_INIT_SLOPE);
        assert!(w.data().iter().all(|v| v.abs() <= 1.0 / 6.0 + 1e-7));
    }
}

//! Parameterised building blocks shared by the network modules.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::ops::ConvParams;
use crate::params::{Initializer, ParamId, ParamStore, CONV_INIT_SLOPE};
use crate::tensor::{Scalar, Tensor};

/// Stride-1 "same" convolution whose kernel and bias live in a [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
}

impl Conv {
    /// Kaiming-uniform kernel (bound `1 / sqrt(fan_in)`), zero bias.
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
    ) -> Result<Self> {
        let w = init.kaiming_uniform([out_ch, in_ch, k, k], in_ch * k * k, CONV_INIT_SLOPE);
        Self::from_tensors(store, name, w, Tensor::zeros([1, out_ch, 1, 1]))
    }

    pub fn zeros(store: &mut ParamStore, name: &str, in_ch: usize, out_ch: usize, k: usize) -> Result<Self> {
        Self::from_tensors(
            store,
            name,
            Tensor::zeros([out_ch, in_ch, k, k]),
            Tensor::zeros([1, out_ch, 1, 1]),
        )
    }

    fn from_tensors(store: &mut ParamStore, name: &str, w: Tensor, b: Tensor) -> Result<Self> {
        let ws = w.shape();
        if ws.channels == 0 || ws.batch == 0 {
            return Err(Error::config(format!("{name}: convolution with zero channels")));
        }
        let p = ConvParams::new(w, b)?;
        let k = p.kernel_size();
        let (in_ch, out_ch) = (p.in_channels(), p.out_channels());
        Ok(Self {
            weight: store.insert(format!("{name}.weight"), p.weight)?,
            bias: store.insert(format!("{name}.bias"), p.bias)?,
            in_ch,
            out_ch,
            k,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight)?;
        let b = g.param(self.bias)?;
        g.conv2d(x, w, b)
    }

    /// Copies the current kernel and bias out of `store`.
    pub fn params<T: Scalar>(&self, store: &ParamStore<T>) -> ConvParams<T> {
        ConvParams {
            weight: store.get(self.weight).clone(),
            bias: store.get(self.bias).clone(),
        }
    }

    pub fn numel(&self) -> usize {
        self.out_ch * self.in_ch * self.k * self.k + self.out_ch
    }
}

/// Per-channel affine parameters of a channel-wise layer norm.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.insert(format!("{name}.gamma"), Tensor::ones([1, channels, 1, 1]))?,
            beta: store.insert(format!("{name}.beta"), Tensor::zeros([1, channels, 1, 1]))?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma)?;
        let beta = g.param(self.beta)?;
        g.layer_norm(x, gamma, beta)
    }
}

/// Runs `f` on a fresh graph over `store` and returns the output value.
pub fn eval_with<T: Scalar>(
    store: &ParamStore<T>,
    x: &Tensor<T>,
    f: impl FnOnce(&mut Graph<'_, T>, Var) -> Result<Var>,
) -> Result<Tensor<T>> {
    let mut g = Graph::with_params(store);
    let xv = g.input(x.clone());
    let out = f(&mut g, xv)?;
    Ok(g.value(out).clone())
}

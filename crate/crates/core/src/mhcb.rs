//! Multi-scale hybrid cross block.
//!
//! ```text
//! X₁ = ReLU(conv3(X)) + X          X₂ = ReLU(conv5(X)) + X
//! X₃ = conv1([X₁, X₂, X])
//! X₄ = ReLU(conv3'(X₃))            X₅ = ReLU(conv5'(X₃))
//! out = conv1'([X₃, X₄, X₅]) + X
//! ```
//!
//! Every convolution keeps the channel width `c`; the two 1×1 fusions map `3c → c`.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::layers::{eval_with, Conv};
use crate::params::{Initializer, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MhcbBlock {
    pub channels: usize,
    pub conv3_a: Conv,
    pub conv5_a: Conv,
    pub fuse_a: Conv,
    pub conv3_b: Conv,
    pub conv5_b: Conv,
    pub fuse_b: Conv,
}

impl MhcbBlock {
    pub fn new(store: &mut ParamStore, init: &mut Initializer, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            channels: c,
            conv3_a: Conv::new(store, init, &format!("{name}.conv3_a"), c, c, 3)?,
            conv5_a: Conv::new(store, init, &format!("{name}.conv5_a"), c, c, 5)?,
            fuse_a: Conv::new(store, init, &format!("{name}.fuse_a"), 3 * c, c, 1)?,
            conv3_b: Conv::new(store, init, &format!("{name}.conv3_b"), c, c, 3)?,
            conv5_b: Conv::new(store, init, &format!("{name}.conv5_b"), c, c, 5)?,
            fuse_b: Conv::new(store, init, &format!("{name}.fuse_b"), 3 * c, c, 1)?,
        })
    }

    /// All kernels and biases zero: the block is the identity map.
    pub fn zeros(store: &mut ParamStore, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            channels: c,
            conv3_a: Conv::zeros(store, &format!("{name}.conv3_a"), c, c, 3)?,
            conv5_a: Conv::zeros(store, &format!("{name}.conv5_a"), c, c, 5)?,
            fuse_a: Conv::zeros(store, &format!("{name}.fuse_a"), 3 * c, c, 1)?,
            conv3_b: Conv::zeros(store, &format!("{name}.conv3_b"), c, c, 3)?,
            conv5_b: Conv::zeros(store, &format!("{name}.conv5_b"), c, c, 5)?,
            fuse_b: Conv::zeros(store, &format!("{name}.fuse_b"), 3 * c, c, 1)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let c = g.shape(x).channels;
        if c != self.channels {
            return Err(Error::config(format!(
                "MHCB built for {} channels, input has {c}",
                self.channels
            )));
        }
        let a3 = self.conv3_a.forward(g, x)?;
        let a3 = g.relu(a3);
        let x1 = g.add(a3, x)?;
        let a5 = self.conv5_a.forward(g, x)?;
        let a5 = g.relu(a5);
        let x2 = g.add(a5, x)?;
        let cat = g.concat(&[x1, x2, x])?;
        let x3 = self.fuse_a.forward(g, cat)?;

        let b3 = self.conv3_b.forward(g, x3)?;
        let x4 = g.relu(b3);
        let b5 = self.conv5_b.forward(g, x3)?;
        let x5 = g.relu(b5);
        let cat = g.concat(&[x3, x4, x5])?;
        let fused = self.fuse_b.forward(g, cat)?;
        g.add(fused, x)
    }

    /// Untracked forward pass.
    pub fn apply<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        eval_with(store, x, |g, v| self.forward(g, v))
    }
}

/// Builds `n` blocks named `{name}.{i}`.
pub fn build_stack(store: &mut ParamStore, init: &mut Initializer, name: &str, c: usize, n: usize) -> Result<Vec<MhcbBlock>> {
    (0..n)
        .map(|i| MhcbBlock::new(store, init, &format!("{name}.{i}"), c))
        .collect()
}

/// Sequential composition of `blocks`; the empty stack is the identity.
pub fn mhcb_stack<T: Scalar>(g: &mut Graph<'_, T>, blocks: &[MhcbBlock], x: Var) -> Result<Var> {
    blocks.iter().try_fold(x, |h, b| b.forward(g, h))
}

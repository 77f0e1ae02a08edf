//! Dual pool attention: `x ⊙ σ(avgpool(x)) + x ⊙ σ(maxpool(x))`, per channel.
//!
//! The block has no learned weights. Pooling is global over the spatial
//! extent, so each channel receives one average and one max descriptor.

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum DpaMode {
    /// Average-pool and max-pool streams, summed.
    #[default]
    Dual,
    /// The average-pool stream used for both terms (`2 · x ⊙ σ(avg)`),
    /// a literal reading of the two-pool formula.
    PrintedAvgTwice,
}

pub fn dpa_forward<T: Scalar>(g: &mut Graph<'_, T>, x: Var, mode: DpaMode) -> Result<Var> {
    let avg = g.global_avg_pool(x)?;
    let s1 = g.sigmoid(avg);
    let first = g.mul_channel_scale(x, s1)?;
    match mode {
        DpaMode::Dual => {
            let max = g.global_max_pool(x)?;
            let s2 = g.sigmoid(max);
            let second = g.mul_channel_scale(x, s2)?;
            g.add(first, second)
        }
        DpaMode::PrintedAvgTwice => g.add(first, first),
    }
}

/// Untracked [`dpa_forward`].
pub fn dpa<T: Scalar>(x: &Tensor<T>, mode: DpaMode) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let v = g.input(x.clone());
    let out = dpa_forward(&mut g, v, mode)?;
    Ok(g.value(out).clone())
}

//! Multi-function restoration of panchromatic images: super-resolution,
//! spectral recovery (colourisation) and both at once, from a single-band input.
//!
//! The network is a nested UNet++ encoder-decoder with three specialised
//! blocks:
//!
//! * [`mhcb`]: a multi-scale 3×3 / 5×5 convolutional stem with residual
//!   cross connections,
//! * [`dpa`]: parameter-free dual-pool channel attention on every skip path,
//! * [`mub`]: an upsampling block mixing features with a selective 2-D
//!   state-space scan over six traversal orders.
//!
//! Everything runs on a small CPU tensor library with tape-based reverse-mode
//! differentiation ([`autodiff`]); the same code is generic over `f32` and `f64`
//! so every gradient can be checked against central differences
//! ([`gradcheck`]).
//!
//! ```
//! use mfmamba::{ModelConfig, Model, Task, Tensor};
//!
//! let cfg = ModelConfig { task: Task::JointX2, depth: 2, growth: 4, ..ModelConfig::default() };
//! let model = Model::build(&cfg).unwrap();
//! let pan = Tensor::<f32>::full([1, 1, 16, 16], 0.5);
//! let rgb = model.infer(&pan).unwrap();
//! assert_eq!(rgb.shape().dims(), [1, 3, 32, 32]);
//! ```

pub mod autodiff;
pub mod backbone;
pub mod dpa;
pub mod error;
pub mod gradcheck;
pub mod kv;
pub mod layers;
pub mod metrics;

pub mod mhcb;
pub mod mub;
pub mod ops;
pub mod params;
pub mod pipeline;

pub mod ssm;
pub mod tensor;

pub use autodiff::{Graph, Var};
pub use backbone::{Model, ModelConfig, Task, TaskSpec};
pub use error::{Error, Result};
pub use ops::ConvParams;
pub use params::{ParamId, ParamStore};
pub use tensor::{Scalar, Shape, Tensor};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/mhcb.md")]
    mod mhcb {}
    #[doc = include_str!("../../../book/src/dpa.md")]
    mod dpa {}
    #[doc = include_str!("../../../book/src/scan.md")]
    mod scan {}
    #[doc = include_str!("../../../book/src/mub.md")]
    mod mub {}
    #[doc = include_str!("../../../book/src/backbone.md")]
    mod backbone {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/gradcheck.md")]
    mod gradcheck {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}

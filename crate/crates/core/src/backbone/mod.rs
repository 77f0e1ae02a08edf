//! Nested UNet++ encoder-decoder.
//!
//! Level `i` runs at `1/2^i` of the input resolution with `g · 2^i` channels.
//! Node `X^{i,j}` (for `j ≥ 1`) concatenates the attention-weighted outputs
//! of `X^{i,0} … X^{i,j-1}` with an upsampled `X^{i+1,j-1}`. The final node
//! `X^{0,d-1}` feeds the task head.

pub mod checkpoint;
pub mod config;
pub mod model;

pub use config::{AblationFlag, ModelConfig, Task, TaskSpec};
pub use model::{ConvBlock, DecoderNode, Model};

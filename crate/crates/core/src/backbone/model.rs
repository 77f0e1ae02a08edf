use crate::autodiff::{Graph, Var};
use crate::dpa::dpa_forward;
use crate::error::{Error, Result};
use crate::layers::{eval_with, Conv};
use crate::mhcb::{build_stack, mhcb_stack, MhcbBlock};
use crate::mub::{BilinearUp, MubBlock, MubConfig, Upsampler};
use crate::ops::ResizeFactor;
use crate::params::{Initializer, ParamStore};
use crate::ssm::ScanOptions;
use crate::tensor::{Scalar, Shape, Tensor};

use super::config::{ModelConfig, TaskSpec};

/// `conv3 → ReLU → conv3 → ReLU`, the body of every UNet++ node.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub first: Conv,
    pub second: Conv,
}

impl ConvBlock {
    fn new(store: &mut ParamStore, init: &mut Initializer, name: &str, in_ch: usize, out_ch: usize) -> Result<Self> {
        Ok(Self {
            first: Conv::new(store, init, &format!("{name}.conv1"), in_ch, out_ch, 3)?,
            second: Conv::new(store, init, &format!("{name}.conv2"), out_ch, out_ch, 3)?,
        })
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.first.forward(g, x)?;
        let h = g.relu(h);
        let h = self.second.forward(g, h)?;
        Ok(g.relu(h))
    }
}

/// Decoder node `X^{i,j}` (`j ≥ 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderNode {
    pub level: usize,
    pub column: usize,
    /// Brings `X^{i+1,j-1}` up to this level's resolution and width.
    pub up: Upsampler,
    pub body: ConvBlock,
}

/// A built network: parameters plus the wiring that addresses them.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    stem_conv: Conv,
    stem: Vec<MhcbBlock>,
    /// Encoder column `X^{i,0}` for `i ≥ 1`.
    encoder: Vec<ConvBlock>,
    /// Decoder nodes in evaluation order (by column, then level).
    decoder: Vec<DecoderNode>,
    head_up: Vec<Upsampler>,
    head: Conv,
}

impl Model {
    /// Builds and initialises a model. Equal configs give bit-identical parameters.
    pub fn build(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut init = Initializer::new(cfg.seed);
        let widths = cfg.level_widths();
        let d = cfg.depth;
        let scan = ScanOptions {
            dirs: cfg.scan_dirs.clone(),
            merge: cfg.scan_merge,
            zoh: cfg.zoh,
        };
        let upsampler = |store: &mut ParamStore,
                         init: &mut Initializer,
                         name: &str,
                         in_ch: usize,
                         out_ch: usize,
                         scale: usize|
         -> Result<Upsampler> {
            if cfg.enable_mub {
                let mc = MubConfig {
                    in_channels: in_ch,
                    out_channels: out_ch,
                    patch_grid: cfg.patch_grid,
                    state: cfg.state_size,
                    scale,
                    scan: scan.clone(),
                };
                Ok(Upsampler::Mamba(Box::new(MubBlock::new(store, init, name, mc)?)))
            } else {
                let factor = ResizeFactor::from_f64(scale as f64)?;
                Ok(Upsampler::Bilinear(BilinearUp::new(store, init, name, in_ch, out_ch, factor)?))
            }
        };

        let stem_conv = Conv::new(&mut store, &mut init, "stem.conv", 1, widths[0], 3)?;
        let stem = build_stack(&mut store, &mut init, "stem.mhcb", widths[0], cfg.stem_blocks())?;
        let encoder = (1..d)
            .map(|i| ConvBlock::new(&mut store, &mut init, &format!("x{i}_0"), widths[i - 1], widths[i]))
            .collect::<Result<Vec<_>>>()?;
        let mut decoder = Vec::new();
        for j in 1..d {
            for i in 0..d - j {
                let name = format!("x{i}_{j}");
                let up = upsampler(&mut store, &mut init, &format!("{name}.up"), widths[i + 1], widths[i], 2)?;
                let body = ConvBlock::new(&mut store, &mut init, &format!("{name}.body"), (j + 1) * widths[i], widths[i])?;
                decoder.push(DecoderNode {
                    level: i,
                    column: j,
                    up,
                    body,
                });
            }
        }
        let head_up = match cfg.task.sr_factor() {
            1 => Vec::new(),
            2 => vec![upsampler(&mut store, &mut init, "head.up0", widths[0], widths[0], 2)?],
            _ => vec![
                upsampler(&mut store, &mut init, "head.up0", widths[0], widths[0], 2)?,
                upsampler(&mut store, &mut init, "head.up1", widths[0], widths[0], 2)?,
            ],
        };
        let head = Conv::new(&mut store, &mut init, "head.out", widths[0], cfg.task.out_channels(), 1)?;
        Ok(Self {
            cfg: cfg.clone(),
            params: store,
            stem_conv,
            stem,
            encoder,
            decoder,
            head_up,
            head,
        })
    }

    /// Number of UNet++ nodes `X^{i,j}`.
    pub fn node_count(&self) -> usize {
        1 + self.encoder.len() + self.decoder.len()
    }

    pub fn num_params(&self) -> usize {
        self.params.numel()
    }

    pub fn decoder_nodes(&self) -> &[DecoderNode] {
        &self.decoder
    }

    pub fn stem_blocks(&self) -> &[MhcbBlock] {
        &self.stem
    }

    pub fn head_upsamplers(&self) -> &[Upsampler] {
        &self.head_up
    }

    /// Smallest side length the input must be a multiple of.
    pub fn size_multiple(&self) -> usize {
        let down = 1 << (self.cfg.depth - 1);
        if self.cfg.enable_mub {
            down * self.cfg.patch_grid
        } else {
            down
        }
    }

    /// Validates an input shape and returns the task contract for it.
    pub fn check_input(&self, s: Shape) -> Result<TaskSpec> {
        let task = self.cfg.task;
        let mismatch = |why: String| {
            Error::config(format!(
                "{task} expects input 1×1×H×W{}; got {s}: {why}",
                self.cfg.input_size.map(|n| format!(" with H = W = {n}")).unwrap_or_default()
            ))
        };
        if s.channels != 1 {
            return Err(mismatch(format!("{} channels instead of 1", s.channels)));
        }
        if s.height != s.width {
            return Err(mismatch("input must be square".into()));
        }
        if let Some(n) = self.cfg.input_size {
            if s.height != n {
                return Err(mismatch(format!("side {} instead of {n}", s.height)));
            }
        }
        let m = self.size_multiple();
        if s.height == 0 || s.height % m != 0 {
            return Err(mismatch(format!(
                "side {} is not a multiple of {m} (depth {}, patch grid {})",
                s.height, self.cfg.depth, self.cfg.patch_grid
            )));
        }
        Ok(TaskSpec::new(task, s.height))
    }

    /// Records the forward pass on `g`, whose parameter store must be
    /// [`Model::params`] or a cast of it.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        self.check_input(g.shape(x))?;
        let d = self.cfg.depth;
        let mut nodes: Vec<Vec<Var>> = vec![Vec::new(); d];

        let h = self.stem_conv.forward(g, x)?;
        let h = mhcb_stack(g, &self.stem, h)?;
        nodes[0].push(h);
        for (i, blk) in self.encoder.iter().enumerate() {
            let down = g.max_pool2(nodes[i][0])?;
            let e = blk.forward(g, down)?;
            nodes[i + 1].push(e);
        }

        // Each node's DPA output is computed once and reused by every later node of its level.
        let mut skips: Vec<Vec<Var>> = vec![Vec::new(); d];
        for node in &self.decoder {
            let (i, j) = (node.level, node.column);
            while skips[i].len() < j {
                let src = nodes[i][skips[i].len()];
                let s = if self.cfg.enable_dpa {
                    dpa_forward(g, src, self.cfg.dpa_mode)?
                } else {
                    src
                };
                skips[i].push(s);
            }
            let up = node.up.forward(g, nodes[i + 1][j - 1])?;
            let mut parts = skips[i][..j].to_vec();
            parts.push(up);
            let cat = g.concat(&parts)?;
            let out = node.body.forward(g, cat)?;
            nodes[i].push(out);
        }

        let mut h = nodes[0][d - 1];
        for up in &self.head_up {
            h = up.forward(g, h)?;
        }
        self.head.forward(g, h)
    }

    /// Untracked forward pass with the model's own parameters.
    pub fn infer(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        eval_with(&self.params, x, |g, v| self.forward(g, v))
    }
}

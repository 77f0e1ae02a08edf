//! Mamba upsample block.
//!
//! `x → layer norm → p×p patches → selective 2-D scan per patch → merge
//! → + x → 1×1 projection → conv to c·r² → pixel shuffle by r`.
//!
//! Patches are scanned independently in row-major tile order; the norm and
//! the projections act per pixel, so they run on the whole map.

use crate::autodiff::{Graph, ScanVars, Var};
use crate::error::{Error, Result};
use crate::layers::{eval_with, Conv, LayerNorm};
use crate::ops::ResizeFactor;
use crate::params::{Initializer, ParamId, ParamStore};
use crate::ssm::selective::{ScanOptions, SelectiveSsm};
use crate::tensor::{Scalar, Shape, Tensor};

/// Parameter handles of a selective scan.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanParams {
    pub w_delta: ParamId,
    pub b_delta: ParamId,
    pub w_b: ParamId,
    pub w_c: ParamId,
    pub a_log: ParamId,
    pub d: ParamId,
    pub channels: usize,
    pub state: usize,
}

impl ScanParams {
    pub fn new(store: &mut ParamStore, init: &mut Initializer, name: &str, c: usize, m: usize) -> Result<Self> {
        let s = SelectiveSsm::init(c, m, init);
        let t = |shape: [usize; 4], v: Vec<f32>| Tensor::from_vec(shape, v);
        Ok(Self {
            w_delta: store.insert(format!("{name}.w_delta"), t([1, 1, c, c], s.proj.w_delta)?)?,
            b_delta: store.insert(format!("{name}.b_delta"), t([1, c, 1, 1], s.proj.b_delta)?)?,
            w_b: store.insert(format!("{name}.w_b"), t([1, 1, m, c], s.proj.w_b)?)?,
            w_c: store.insert(format!("{name}.w_c"), t([1, 1, m, c], s.proj.w_c)?)?,
            a_log: store.insert(format!("{name}.a_log"), t([1, 1, c, m], s.a_log)?)?,
            d: store.insert(format!("{name}.d"), t([1, c, 1, 1], s.d)?)?,
            channels: c,
            state: m,
        })
    }

    pub fn vars<T: Scalar>(&self, g: &mut Graph<'_, T>) -> Result<ScanVars> {
        Ok(ScanVars {
            w_delta: g.param(self.w_delta)?,
            b_delta: g.param(self.b_delta)?,
            w_b: g.param(self.w_b)?,
            w_c: g.param(self.w_c)?,
            a_log: g.param(self.a_log)?,
            d: g.param(self.d)?,
            state: self.state,
        })
    }

    /// Copies the current values out of `store`.
    pub fn to_ssm<T: Scalar>(&self, store: &ParamStore<T>) -> SelectiveSsm<T> {
        let v = |id: ParamId| store.get(id).data().to_vec();
        SelectiveSsm {
            channels: self.channels,
            state: self.state,
            proj: crate::ssm::SelectiveProjection {
                w_delta: v(self.w_delta),
                b_delta: v(self.b_delta),
                w_b: v(self.w_b),
                w_c: v(self.w_c),
            },
            a_log: v(self.a_log),
            d: v(self.d),
        }
    }
}

/// Construction options of a [`MubBlock`].
#[derive(Clone, Debug, PartialEq)]
pub struct MubConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub patch_grid: usize,
    pub state: usize,
    pub scale: usize,
    pub scan: ScanOptions,
}

impl MubConfig {
    pub fn new(channels: usize, scale: usize) -> Self {
        Self {
            in_channels: channels,
            out_channels: channels,
            patch_grid: 2,
            state: 16,
            scale,
            scan: ScanOptions::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.patch_grid) {
            return Err(Error::config(format!(
                "patch grid must be 1, 2 or 3, got {}",
                self.patch_grid
            )));
        }
        if self.scale == 0 || self.in_channels == 0 || self.out_channels == 0 || self.state == 0 {
            return Err(Error::config("MUB scale, channels and state size must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MubBlock {
    pub cfg: MubConfig,
    pub norm: LayerNorm,
    pub ssm: ScanParams,
    pub out_proj: Conv,
    pub upsample: Conv,
}

impl MubBlock {
    pub fn new(store: &mut ParamStore, init: &mut Initializer, name: &str, cfg: MubConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.in_channels;
        let r = cfg.scale;
        Ok(Self {
            norm: LayerNorm::new(store, &format!("{name}.norm"), c)?,
            ssm: ScanParams::new(store, init, &format!("{name}.ssm"), c, cfg.state)?,
            out_proj: Conv::new(store, init, &format!("{name}.out_proj"), c, c, 1)?,
            upsample: Conv::new(store, init, &format!("{name}.upsample"), c, cfg.out_channels * r * r, 3)?,
            cfg,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let s = g.shape(x);
        let p = self.cfg.patch_grid;
        if s.channels != self.cfg.in_channels {
            return Err(Error::config(format!(
                "MUB built for {} channels, input has {}",
                self.cfg.in_channels, s.channels
            )));
        }
        check_divisible(s, p)?;
        let normed = self.norm.forward(g, x)?;
        let vars = self.ssm.vars(g)?;
        let mixed = if p == 1 {
            g.selective_scan(normed, vars, &self.cfg.scan)?
        } else {
            let tiles = patch_split_var(g, normed, p)?;
            let scanned = tiles
                .into_iter()
                .map(|t| g.selective_scan(t, vars, &self.cfg.scan))
                .collect::<Result<Vec<_>>>()?;
            g.tile_merge(&scanned, p)?
        };
        let res = g.add(mixed, x)?;
        let proj = self.out_proj.forward(g, res)?;
        let up = self.upsample.forward(g, proj)?;
        if self.cfg.scale == 1 {
            Ok(up)
        } else {
            g.pixel_shuffle(up, self.cfg.scale)
        }
    }

    pub fn apply<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        eval_with(store, x, |g, v| self.forward(g, v))
    }
}

/// Ablation fallback for [`MubBlock`]: bilinear ×r followed by a 1×1 conv.
#[derive(Clone, Debug, PartialEq)]
pub struct BilinearUp {
    pub factor: ResizeFactor,
    pub conv: Conv,
}

impl BilinearUp {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        factor: ResizeFactor,
    ) -> Result<Self> {
        Ok(Self {
            factor,
            conv: Conv::new(store, init, &format!("{name}.conv"), in_ch, out_ch, 1)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let up = g.bilinear_resize(x, self.factor)?;
        self.conv.forward(g, up)
    }
}

/// Either upsampling path.
#[derive(Clone, Debug, PartialEq)]
pub enum Upsampler {
    Mamba(Box<MubBlock>),
    Bilinear(BilinearUp),
}

impl Upsampler {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        match self {
            Upsampler::Mamba(m) => m.forward(g, x),
            Upsampler::Bilinear(b) => b.forward(g, x),
        }
    }
}

fn check_divisible(s: Shape, p: usize) -> Result<()> {
    if p == 0 {
        return Err(Error::config("patch grid must be positive"));
    }
    if s.height % p != 0 {
        return Err(Error::config(format!(
            "height {} is not divisible by patch grid {p}",
            s.height
        )));
    }
    if s.width % p != 0 {
        return Err(Error::config(format!(
            "width {} is not divisible by patch grid {p}",
            s.width
        )));
    }
    Ok(())
}

fn patch_split_var<T: Scalar>(g: &mut Graph<'_, T>, x: Var, p: usize) -> Result<Vec<Var>> {
    let s = g.shape(x);
    check_divisible(s, p)?;
    let (th, tw) = (s.height / p, s.width / p);
    let mut tiles = Vec::with_capacity(p * p);
    for ty in 0..p {
        for tx in 0..p {
            tiles.push(g.crop(x, ty * th, tx * tw, th, tw)?);
        }
    }
    Ok(tiles)
}

/// Non-overlapping `p × p` tiling in row-major tile order.
pub fn patch_split<T: Scalar>(x: &Tensor<T>, p: usize) -> Result<Vec<Tensor<T>>> {
    let mut g = Graph::new();
    let v = g.input(x.clone());
    let tiles = patch_split_var(&mut g, v, p)?;
    Ok(tiles.into_iter().map(|t| g.value(t).clone()).collect())
}

/// Inverse of [`patch_split`].
pub fn patch_merge<T: Scalar>(tiles: &[Tensor<T>], p: usize) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let vars: Vec<Var> = tiles.iter().map(|t| g.input(t.clone())).collect();
    let out = g.tile_merge(&vars, p)?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::selective::ssm_2d;

    fn ramp(shape: [usize; 4]) -> Tensor {
        Tensor::from_fn(shape, |n, c, y, x| ((n * 13 + c * 7 + y * 3 + x * 5) % 17) as f32 / 17.0 - 0.5)
    }

    #[test]
    fn split_four_by_four() {
        let x = ramp([1, 1, 4, 4]);
        let tiles = patch_split(&x, 2).unwrap();
        assert_eq!(tiles.len(), 4);
        assert_eq!(tiles[1].data(), &[x.at(0, 0, 0, 2), x.at(0, 0, 0, 3), x.at(0, 0, 1, 2), x.at(0, 0, 1, 3)]);
        assert_eq!(tiles[2].at(0, 0, 0, 0), x.at(0, 0, 2, 0));
        assert_eq!(patch_merge(&tiles, 2).unwrap(), x);
    }

    #[test]
    fn three_by_three_grid() {
        let x = ramp([1, 2, 6, 6]);
        let tiles = patch_split(&x, 3).unwrap();
        assert_eq!(tiles.len(), 9);
        for (i, t) in tiles.iter().enumerate() {
            assert_eq!(t.shape(), Shape::new(1, 2, 2, 2));
            let (oy, ox) = ((i / 3) * 2, (i % 3) * 2);
            assert_eq!(t.at(0, 1, 1, 0), x.at(0, 1, oy + 1, ox));
        }
        assert_eq!(patch_merge(&tiles, 3).unwrap(), x);
    }

    #[test]
    fn indivisible_dims_named() {
        let err = patch_split(&ramp([1, 1, 6, 4]), 3).unwrap_err().to_string();
        assert!(err.contains("width 4"), "{err}");
        let err = patch_split(&ramp([1, 1, 5, 6]), 3).unwrap_err().to_string();
        assert!(err.contains("height 5"), "{err}");
    }

    fn block(c: usize, p: usize, r: usize, store: &mut ParamStore) -> MubBlock {
        let mut init = Initializer::new(10);
        let cfg = MubConfig {
            patch_grid: p,
            state: 4,
            ..MubConfig::new(c, r)
        };
        MubBlock::new(store, &mut init, "mub", cfg).unwrap()
    }

    #[test]
    fn zero_tail_gives_zero_output() {
        let mut store = ParamStore::new();
        let b = block(3, 2, 2, &mut store);
        for id in [b.out_proj.weight, b.out_proj.bias, b.upsample.weight, b.upsample.bias] {
            let s = store.get(id).shape();
            *store.get_mut(id) = Tensor::zeros(s);
        }
        let y = b.apply(&store, &ramp([1, 3, 4, 4])).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 3, 8, 8));
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_patch_matches_whole_map_scan() {
        let mut store = ParamStore::new();
        let b = block(2, 1, 2, &mut store);
        let x = ramp([1, 2, 4, 4]);
        let mixed = eval_with(&store, &x, |g, v| {
            let n = b.norm.forward(g, v)?;
            let vars = b.ssm.vars(g)?;
            g.selective_scan(n, vars, &b.cfg.scan)
        })
        .unwrap();
        let normed = eval_with(&store, &x, |g, v| b.norm.forward(g, v)).unwrap();
        let direct = ssm_2d(&normed, &b.ssm.to_ssm(&store), &b.cfg.scan).unwrap();
        assert_eq!(mixed, direct);
    }

    #[test]
    fn upscales_by_r() {
        let mut store = ParamStore::new();
        let b = block(4, 2, 2, &mut store);
        let y = b.apply(&store, &ramp([1, 4, 8, 8])).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 4, 16, 16));
        assert!(y.is_finite());
        let mut store = ParamStore::new();
        let b4 = block(2, 2, 4, &mut store);
        assert_eq!(b4.apply(&store, &ramp([1, 2, 4, 4])).unwrap().shape(), Shape::new(1, 2, 16, 16));
    }

    #[test]
    fn rejects_bad_patch_grid() {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(1);
        let cfg = MubConfig {
            patch_grid: 4,
            ..MubConfig::new(2, 2)
        };
        assert!(MubBlock::new(&mut store, &mut init, "m", cfg).is_err());
    }
}

//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its variables. Parameters
//! are read from an optional [`ParamStore`]; each parameter becomes a single
//! leaf no matter how often it is used. [`Graph::backward`] walks the tape in
//! reverse and leaves the gradient of every recorded tensor in its grad slot.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ops::{self, ResizeFactor};
use crate::params::{ParamId, ParamStore};
use crate::ssm::selective::{ssm_2d_backward, ssm_2d_forward, ScanOptions, SelectiveWeights};
use crate::tensor::{Scalar, Shape, Tensor};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a tensor recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Parameter handles of a fused selective-scan node.
#[derive(Clone, Copy, Debug)]
pub struct ScanVars {
    pub w_delta: Var,
    pub b_delta: Var,
    pub w_b: Var,
    pub w_c: Var,
    pub a_log: Var,
    pub d: Var,
    pub state: usize,
}

enum Op<T: Scalar> {
    Leaf,
    Param,
    Conv2d { x: Var, w: Var, b: Var },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Scale(Var, T),
    Concat(Vec<Var>),
    MulChannel { x: Var, s: Var },
    GlobalAvg(Var),
    // `out[i] = x[index[i]]`
    Gather { x: Var, index: Vec<usize> },
    Resize { x: Var, factor: ResizeFactor },
    // `out[i] = parts[map[i].0][map[i].1]`
    Assemble { parts: Vec<Var>, map: Vec<(usize, usize)> },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    SelectiveScan { x: Var, vars: ScanVars, opts: ScanOptions },
    L1 { pred: Var, target: Var },
    WeightedSum { x: Var, weights: Vec<T> },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Recording of a forward computation.
pub struct Graph<'p, T: Scalar = f32> {
    params: Option<&'p ParamStore<T>>,
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
}

impl<T: Scalar> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    /// A graph without parameters; only [`Graph::input`] leaves.
    pub fn new() -> Self {
        Self {
            params: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn with_params(params: &'p ParamStore<T>) -> Self {
        Self {
            params: Some(params),
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Leaf for a stored parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.param_vars.get(&id) {
            return Ok(v);
        }
        let store = self
            .params
            .ok_or_else(|| Error::contract("graph has no parameter store"))?;
        if id.index() >= store.len() {
            return Err(Error::contract(format!("unknown parameter {}", id.index())));
        }
        let mut value = store.get(id).clone();
        value.clear_grad();
        let v = self.push(value, Op::Param);
        self.param_vars.insert(id, v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of `v` after [`Graph::backward`], as a tensor.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].value.grad_tensor()
    }

    /// `(parameter, gradient)` for every parameter that took part in the graph.
    pub fn param_grads(&self) -> Vec<(ParamId, &[T])> {
        let mut out: Vec<_> = self
            .param_vars
            .iter()
            .filter_map(|(&id, &v)| self.nodes[v.0].value.grad().map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = ops::conv2d_raw(self.value(x), self.value(w), self.value(b).data())?;
        Ok(self.push(out, Op::Conv2d { x, w, b }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::relu(self.value(x));
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = ops::sigmoid(self.value(x));
        self.push(out, Op::Sigmoid(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s))
    }

    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let out = ops::concat_channels(&vals)?;
        Ok(self.push(out, Op::Concat(xs.to_vec())))
    }

    pub fn mul_channel_scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let out = ops::mul_channel_scale(self.value(x), self.value(s))?;
        Ok(self.push(out, Op::MulChannel { x, s }))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let out = ops::global_avg_pool(self.value(x))?;
        Ok(self.push(out, Op::GlobalAvg(x)))
    }

    pub fn global_max_pool(&mut self, x: Var) -> Result<Var> {
        let (out, index) = ops::global_max_pool_with_index(self.value(x))?;
        Ok(self.push(out, Op::Gather { x, index }))
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (out, index) = ops::max_pool2_with_index(self.value(x))?;
        Ok(self.push(out, Op::Gather { x, index }))
    }

    pub fn bilinear_resize(&mut self, x: Var, factor: ResizeFactor) -> Result<Var> {
        let out = ops::bilinear_resize(self.value(x), factor)?;
        Ok(self.push(out, Op::Resize { x, factor }))
    }

    fn gather(&mut self, x: Var, shape: Shape, index: Vec<usize>) -> Result<Var> {
        let src = self.value(x).data();
        let data = index.iter().map(|&i| src[i]).collect();
        let out = Tensor::from_vec(shape, data)?;
        Ok(self.push(out, Op::Gather { x, index }))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let (shape, index) = ops::pixel_shuffle_index(self.shape(x), r)?;
        self.gather(x, shape, index)
    }

    /// Spatial window `[y0, y0 + h) × [x0, x0 + w)`.
    pub fn crop(&mut self, x: Var, y0: usize, x0: usize, h: usize, w: usize) -> Result<Var> {
        let s = self.shape(x);
        if h == 0 || w == 0 || y0 + h > s.height || x0 + w > s.width {
            return Err(Error::config(format!(
                "crop {h}x{w} at ({y0}, {x0}) outside {s}"
            )));
        }
        let os = s.with_spatial(h, w);
        let mut index = Vec::with_capacity(os.numel());
        for n in 0..s.batch {
            for c in 0..s.channels {
                for y in 0..h {
                    for xx in 0..w {
                        index.push(s.offset(n, c, y0 + y, x0 + xx));
                    }
                }
            }
        }
        self.gather(x, os, index)
    }

    /// Places `grid × grid` equally sized tiles (row-major) into one map.
    pub fn tile_merge(&mut self, parts: &[Var], grid: usize) -> Result<Var> {
        if grid == 0 || parts.len() != grid * grid {
            return Err(Error::config(format!(
                "tile merge needs {} tiles, got {}",
                grid * grid,
                parts.len()
            )));
        }
        let ts = self.shape(parts[0]);
        if parts.iter().any(|&p| self.shape(p) != ts) {
            return Err(Error::config("tiles to merge differ in shape"));
        }
        let os = ts.with_spatial(ts.height * grid, ts.width * grid);
        let mut map = Vec::with_capacity(os.numel());
        for n in 0..os.batch {
            for c in 0..os.channels {
                for y in 0..os.height {
                    for x in 0..os.width {
                        let tile = (y / ts.height) * grid + x / ts.width;
                        map.push((tile, ts.offset(n, c, y % ts.height, x % ts.width)));
                    }
                }
            }
        }
        let data = map
            .iter()
            .map(|&(t, i)| self.value(parts[t]).data()[i])
            .collect();
        let out = Tensor::from_vec(os, data)?;
        Ok(self.push(
            out,
            Op::Assemble {
                parts: parts.to_vec(),
                map,
            },
        ))
    }

    /// Normalises across channels at every pixel, then applies per-channel affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let s = self.shape(x);
        let cs = s.with_spatial(1, 1).with_channels(s.channels);
        for v in [gamma, beta] {
            if self.value(v).len() != s.channels {
                return Err(Error::config(format!(
                    "layer norm affine of shape {} for {} channels",
                    self.shape(v),
                    cs.channels
                )));
            }
        }
        let (c, plane) = (s.channels, s.plane());
        let xd = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let eps = T::lit(LAYER_NORM_EPS);
        let inv_c = T::one() / T::from_usize(c).unwrap();
        let mut xhat = vec![T::zero(); s.numel()];
        let mut rstd = vec![T::zero(); s.batch * plane];
        let mut out = vec![T::zero(); s.numel()];
        for n in 0..s.batch {
            for p in 0..plane {
                let at = |ch: usize| (n * c + ch) * plane + p;
                let mean = (0..c).map(|ch| xd[at(ch)]).sum::<T>() * inv_c;
                let var = (0..c).map(|ch| (xd[at(ch)] - mean).powi(2)).sum::<T>() * inv_c;
                let r = T::one() / (var + eps).sqrt();
                rstd[n * plane + p] = r;
                for ch in 0..c {
                    let xh = (xd[at(ch)] - mean) * r;
                    xhat[at(ch)] = xh;
                    out[at(ch)] = xh * g[ch] + b[ch];
                }
            }
        }
        let out = Tensor::from_vec(s, out)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    /// Fused selective 2-D scan; see [`crate::ssm::selective`].
    pub fn selective_scan(&mut self, x: Var, vars: ScanVars, opts: &ScanOptions) -> Result<Var> {
        let out = {
            let w = self.scan_weights(x, &vars);
            ssm_2d_forward(self.value(x), &w, opts)?
        };
        Ok(self.push(
            out,
            Op::SelectiveScan {
                x,
                vars,
                opts: opts.clone(),
            },
        ))
    }

    fn scan_weights(&self, x: Var, v: &ScanVars) -> SelectiveWeights<'_, T> {
        SelectiveWeights {
            channels: self.shape(x).channels,
            state: v.state,
            w_delta: self.value(v.w_delta).data(),
            b_delta: self.value(v.b_delta).data(),
            w_b: self.value(v.w_b).data(),
            w_c: self.value(v.w_c).data(),
            a_log: self.value(v.a_log).data(),
            d: self.value(v.d).data(),
        }
    }

    /// Mean absolute error, a `1×1×1×1` tensor.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let l = ops::l1_loss(self.value(pred), self.value(target))?;
        Ok(self.push(Tensor::scalar(l), Op::L1 { pred, target }))
    }

    /// `Σ x ⊙ weights`, a `1×1×1×1` tensor.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<T>) -> Result<Var> {
        if weights.len() != self.value(x).len() {
            return Err(Error::config("weighted_sum: weight count differs from tensor size"));
        }
        let s: T = self
            .value(x)
            .data()
            .iter()
            .zip(&weights)
            .map(|(&a, &b)| a * b)
            .sum();
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, weights }))
    }

    /// Back-propagates from a one-element `loss`, filling every grad slot.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            match g {
                Some(g) => node.value.set_grad(g)?,
                None => node.value.clear_grad(),
            }
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Conv2d { x, w, b } => {
                let (gx, gw, gb) = ops::conv2d_backward(val(*x), val(*w), g);
                accumulate(grads, *x, gx);
                accumulate(grads, *w, gw);
                accumulate(grads, *b, gb);
            }
            Op::Relu(x) => {
                let gx = val(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                accumulate(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                let gx = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&s, &gv)| gv * s * (T::one() - s))
                    .collect();
                accumulate(grads, *x, gx);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.to_vec());
                accumulate(grads, *b, g.to_vec());
            }
            Op::Scale(x, s) => accumulate(grads, *x, g.iter().map(|&v| v * *s).collect()),
            Op::Concat(xs) => {
                let s = node.value.shape();
                let plane = s.plane();
                let mut offset = 0;
                for &x in xs {
                    let c = val(x).shape().channels;
                    let mut gx = Vec::with_capacity(val(x).len());
                    for n in 0..s.batch {
                        let start = (n * s.channels + offset) * plane;
                        gx.extend_from_slice(&g[start..start + c * plane]);
                    }
                    accumulate(grads, x, gx);
                    offset += c;
                }
            }
            Op::MulChannel { x, s } => {
                let plane = val(*x).shape().plane();
                let sv = val(*s).data();
                let xd = val(*x).data();
                let mut gx = g.to_vec();
                let mut gs = vec![T::zero(); sv.len()];
                for (k, (gchunk, xchunk)) in gx.chunks_mut(plane).zip(xd.chunks(plane)).enumerate() {
                    gs[k] = gchunk.iter().zip(xchunk).map(|(&a, &b)| a * b).sum();
                    gchunk.iter_mut().for_each(|v| *v *= sv[k]);
                }
                accumulate(grads, *x, gx);
                accumulate(grads, *s, gs);
            }
            Op::GlobalAvg(x) => {
                let s = val(*x).shape();
                let inv = T::one() / T::from_usize(s.plane()).unwrap();
                let gx = g
                    .iter()
                    .flat_map(|&gv| std::iter::repeat_n(gv * inv, s.plane()))
                    .collect();
                accumulate(grads, *x, gx);
            }
            Op::Gather { x, index } => {
                let mut gx = vec![T::zero(); val(*x).len()];
                for (&src, &gv) in index.iter().zip(g) {
                    gx[src] += gv;
                }
                accumulate(grads, *x, gx);
            }
            Op::Resize { x, factor } => {
                let gx = ops::bilinear_resize_backward(val(*x).shape(), *factor, g)?;
                accumulate(grads, *x, gx);
            }
            Op::Assemble { parts, map } => {
                let mut gp: Vec<Vec<T>> = parts.iter().map(|&p| vec![T::zero(); val(p).len()]).collect();
                for (&(t, j), &gv) in map.iter().zip(g) {
                    gp[t][j] += gv;
                }
                for (&p, gv) in parts.iter().zip(gp) {
                    accumulate(grads, p, gv);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let s = val(*x).shape();
                let (c, plane) = (s.channels, s.plane());
                let gam = val(*gamma).data();
                let inv_c = T::one() / T::from_usize(c).unwrap();
                let mut gx = vec![T::zero(); s.numel()];
                let mut gg = vec![T::zero(); c];
                let mut gb = vec![T::zero(); c];
                for n in 0..s.batch {
                    for p in 0..plane {
                        let at = |ch: usize| (n * c + ch) * plane + p;
                        let mut mean_g = T::zero();
                        let mut mean_gx = T::zero();
                        for ch in 0..c {
                            let gv = g[at(ch)];
                            gg[ch] += gv * xhat[at(ch)];
                            gb[ch] += gv;
                            let gh = gv * gam[ch];
                            mean_g += gh;
                            mean_gx += gh * xhat[at(ch)];
                        }
                        mean_g *= inv_c;
                        mean_gx *= inv_c;
                        let r = rstd[n * plane + p];
                        for ch in 0..c {
                            let gh = g[at(ch)] * gam[ch];
                            gx[at(ch)] = r * (gh - mean_g - xhat[at(ch)] * mean_gx);
                        }
                    }
                }
                accumulate(grads, *x, gx);
                accumulate(grads, *gamma, gg);
                accumulate(grads, *beta, gb);
            }
            Op::SelectiveScan { x, vars, opts } => {
                let w = self.scan_weights(*x, vars);
                let sg = ssm_2d_backward(val(*x), &w, opts, g)?;
                accumulate(grads, *x, sg.x);
                accumulate(grads, vars.w_delta, sg.w_delta);
                accumulate(grads, vars.b_delta, sg.b_delta);
                accumulate(grads, vars.w_b, sg.w_b);
                accumulate(grads, vars.w_c, sg.w_c);
                accumulate(grads, vars.a_log, sg.a_log);
                accumulate(grads, vars.d, sg.d);
            }
            Op::L1 { pred, target } => {
                let n = T::from_usize(val(*pred).len()).unwrap();
                let scale = g[0] / n;
                let gp: Vec<T> = val(*pred)
                    .data()
                    .iter()
                    .zip(val(*target).data())
                    .map(|(&p, &t)| {
                        if p > t {
                            scale
                        } else if p < t {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                let gt = gp.iter().map(|&v| -v).collect();
                accumulate(grads, *pred, gp);
                accumulate(grads, *target, gt);
            }
            Op::WeightedSum { x, weights } => {
                accumulate(grads, *x, weights.iter().map(|&w| w * g[0]).collect());
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

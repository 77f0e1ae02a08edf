//! Untracked tensor primitives and their adjoints.
//!
//! The forward functions here are the public functional API; the `*_backward`
//! helpers are used by [`crate::autodiff::Graph`].

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Kernel and bias of a stride-1 "same" convolution.
///
/// The weight is stored as a tensor of shape `(out_ch, in_ch, k, k)` and the
/// bias as `(1, out_ch, 1, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T: Scalar = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let ws = weight.shape();
        check_kernel(ws)?;
        if bias.len() != ws.batch {
            return Err(Error::config(format!(
                "bias has {} entries for {} output channels",
                bias.len(),
                ws.batch
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(in_ch: usize, out_ch: usize, k: usize) -> Result<Self> {
        Self::new(
            Tensor::zeros([out_ch, in_ch, k, k]),
            Tensor::zeros([1, out_ch, 1, 1]),
        )
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().channels
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().batch
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.shape().height
    }

    pub fn padding(&self) -> usize {
        (self.kernel_size() - 1) / 2
    }
}

pub(crate) fn check_kernel(ws: Shape) -> Result<usize> {
    let k = ws.height;
    if ws.width != k || !matches!(k, 1 | 3 | 5) {
        return Err(Error::config(format!(
            "convolution kernel must be 1x1, 3x3 or 5x5, got {}x{}",
            ws.height, ws.width
        )));
    }
    Ok(k)
}

fn same_shape(a: Shape, b: Shape, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::config(format!("{what}: shape mismatch {a} vs {b}")));
    }
    Ok(())
}

// Valid output range for a 1-D shift `d` over a line of length `n`.
#[inline]
fn shifted_range(n: usize, d: isize) -> (usize, usize) {
    let lo = ((-d).max(0) as usize).min(n);
    let hi = (n as isize - d).clamp(0, n as isize) as usize;
    (lo, hi.max(lo))
}

/// Stride-1 convolution with zero padding `(k - 1) / 2`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    conv2d_raw(x, &p.weight, p.bias.data())
}

pub(crate) fn conv2d_raw<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ws = w.shape();
    let k = check_kernel(ws)?;
    if xs.channels != ws.channels {
        return Err(Error::config(format!(
            "conv2d expects {} input channels, got {}",
            ws.channels, xs.channels
        )));
    }
    if bias.len() != ws.batch {
        return Err(Error::config("conv2d bias length differs from output channels"));
    }
    let (h, wd) = (xs.height, xs.width);
    let plane = h * wd;
    let cin = xs.channels;
    let cout = ws.batch;
    let pad = (k / 2) as isize;
    let out_shape = xs.with_channels(cout);
    let mut out = vec![T::zero(); out_shape.numel()];
    let xd = x.data();
    let wdat = w.data();

    out.par_chunks_mut(plane)
        .enumerate()
        .for_each(|(idx, dst)| {
            let n = idx / cout;
            let co = idx % cout;
            dst.iter_mut().for_each(|v| *v = bias[co]);
            for ci in 0..cin {
                let src = &xd[(n * cin + ci) * plane..(n * cin + ci + 1) * plane];
                let wbase = (co * cin + ci) * k * k;
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    let (ylo, yhi) = shifted_range(h, dy);
                    for kx in 0..k {
                        let dx = kx as isize - pad;
                        let (xlo, xhi) = shifted_range(wd, dx);
                        if xlo == xhi {
                            continue;
                        }
                        let wv = wdat[wbase + ky * k + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        for y in ylo..yhi {
                            let sy = (y as isize + dy) as usize;
                            let srow = &src[sy * wd..(sy + 1) * wd];
                            let drow = &mut dst[y * wd..(y + 1) * wd];
                            let sx0 = (xlo as isize + dx) as usize;
                            for (d, &s) in drow[xlo..xhi].iter_mut().zip(&srow[sx0..sx0 + (xhi - xlo)]) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        });
    Tensor::from_vec(out_shape, out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let xs = x.shape();
    let ws = w.shape();
    let k = ws.height;
    let (h, wd) = (xs.height, xs.width);
    let plane = h * wd;
    let cin = xs.channels;
    let cout = ws.batch;
    let nb = xs.batch;
    let pad = (k / 2) as isize;
    let xd = x.data();
    let wdat = w.data();

    // dL/dx: scatter every output gradient back through the kernel taps.
    let mut gx = vec![T::zero(); xs.numel()];
    gx.par_chunks_mut(plane).enumerate().for_each(|(idx, dst)| {
        let n = idx / cin;
        let ci = idx % cin;
        for co in 0..cout {
            let g = &gout[(n * cout + co) * plane..(n * cout + co + 1) * plane];
            let wbase = (co * cin + ci) * k * k;
            for ky in 0..k {
                let dy = ky as isize - pad;
                let (ylo, yhi) = shifted_range(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let (xlo, xhi) = shifted_range(wd, dx);
                    if xlo == xhi {
                        continue;
                    }
                    let wv = wdat[wbase + ky * k + kx];
                    for y in ylo..yhi {
                        let sy = (y as isize + dy) as usize;
                        let grow = &g[y * wd..(y + 1) * wd];
                        let drow = &mut dst[sy * wd..(sy + 1) * wd];
                        let sx0 = (xlo as isize + dx) as usize;
                        for (d, &gv) in drow[sx0..sx0 + (xhi - xlo)].iter_mut().zip(&grow[xlo..xhi]) {
                            *d += wv * gv;
                        }
                    }
                }
            }
        }
    });

    let mut gw = vec![T::zero(); ws.numel()];
    gw.par_chunks_mut(cin * k * k)
        .enumerate()
        .for_each(|(co, dst)| {
            for n in 0..nb {
                let g = &gout[(n * cout + co) * plane..(n * cout + co + 1) * plane];
                for ci in 0..cin {
                    let src = &xd[(n * cin + ci) * plane..(n * cin + ci + 1) * plane];
                    for ky in 0..k {
                        let dy = ky as isize - pad;
                        let (ylo, yhi) = shifted_range(h, dy);
                        for kx in 0..k {
                            let dx = kx as isize - pad;
                            let (xlo, xhi) = shifted_range(wd, dx);
                            if xlo == xhi {
                                continue;
                            }
                            let mut acc = T::zero();
                            for y in ylo..yhi {
                                let sy = (y as isize + dy) as usize;
                                let srow = &src[sy * wd..(sy + 1) * wd];
                                let grow = &g[y * wd..(y + 1) * wd];
                                let sx0 = (xlo as isize + dx) as usize;
                                for (&gv, &s) in grow[xlo..xhi].iter().zip(&srow[sx0..sx0 + (xhi - xlo)]) {
                                    acc += gv * s;
                                }
                            }
                            dst[(ci * k + ky) * k + kx] += acc;
                        }
                    }
                }
            }
        });

    let mut gb = vec![T::zero(); cout];
    for n in 0..nb {
        for (co, b) in gb.iter_mut().enumerate() {
            *b += gout[(n * cout + co) * plane..(n * cout + co + 1) * plane]
                .iter()
                .copied()
                .sum::<T>();
        }
    }
    (gx, gw, gb)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

#[inline]
pub(crate) fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^v)` without overflow.
#[inline]
pub(crate) fn softplus_scalar<T: Scalar>(v: T) -> T {
    if v > T::lit(20.0) {
        v
    } else {
        v.exp().ln_1p()
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Per-channel mean over all spatial positions, shape `b×c×1×1`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.plane() == 0 {
        return Err(Error::config("global pooling over an empty plane"));
    }
    let inv = T::one() / T::from_usize(s.plane()).unwrap();
    let data = x
        .data()
        .chunks(s.plane())
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::from_vec(s.with_spatial(1, 1), data)
}

/// Per-channel maximum over all spatial positions, shape `b×c×1×1`.
pub fn global_max_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(global_max_pool_with_index(x)?.0)
}

pub(crate) fn global_max_pool_with_index<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = x.shape();
    if s.plane() == 0 {
        return Err(Error::config("global pooling over an empty plane"));
    }
    let mut vals = Vec::with_capacity(s.batch * s.channels);
    let mut idx = Vec::with_capacity(s.batch * s.channels);
    for (pi, p) in x.data().chunks(s.plane()).enumerate() {
        let mut best = 0;
        for (i, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = i;
            }
        }
        vals.push(p[best]);
        idx.push(pi * s.plane() + best);
    }
    Ok((Tensor::from_vec(s.with_spatial(1, 1), vals)?, idx))
}

/// 2×2 stride-2 max pooling; returns the flat source index of each maximum.
pub(crate) fn max_pool2_with_index<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = x.shape();
    if s.height % 2 != 0 || s.width % 2 != 0 {
        return Err(Error::config(format!(
            "2x2 max pooling needs even spatial dims, got {}x{}",
            s.height, s.width
        )));
    }
    let os = s.with_spatial(s.height / 2, s.width / 2);
    let mut vals = Vec::with_capacity(os.numel());
    let mut idx = Vec::with_capacity(os.numel());
    let xd = x.data();
    for n in 0..s.batch {
        for c in 0..s.channels {
            for y in 0..os.height {
                for xx in 0..os.width {
                    let mut best = s.offset(n, c, 2 * y, 2 * xx);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let o = s.offset(n, c, 2 * y + dy, 2 * xx + dx);
                        if xd[o] > xd[best] {
                            best = o;
                        }
                    }
                    vals.push(xd[best]);
                    idx.push(best);
                }
            }
        }
    }
    Ok((Tensor::from_vec(os, vals)?, idx))
}

pub fn max_pool2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(max_pool2_with_index(x)?.0)
}

/// Concatenates tensors along the channel axis.
pub fn concat_channels<T: Scalar>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::config("concat of an empty list"))?
        .shape();
    let mut channels = 0;
    for t in xs {
        let s = t.shape();
        if s.batch != first.batch || s.height != first.height || s.width != first.width {
            return Err(Error::config(format!(
                "concat: {s} is incompatible with {first}"
            )));
        }
        channels += s.channels;
    }
    let out_shape = first.with_channels(channels);
    let mut data = Vec::with_capacity(out_shape.numel());
    let plane = first.plane();
    for n in 0..first.batch {
        for t in xs {
            let c = t.shape().channels;
            data.extend_from_slice(&t.data()[n * c * plane..(n + 1) * c * plane]);
        }
    }
    Tensor::from_vec(out_shape, data)
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(a.shape(), b.shape(), "add")?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::from_vec(a.shape(), data)
}

fn check_channel_scale(xs: Shape, ss: Shape) -> Result<()> {
    if ss != xs.with_spatial(1, 1) {
        return Err(Error::config(format!(
            "channel scale of shape {ss} cannot broadcast over {xs}"
        )));
    }
    Ok(())
}

/// Multiplies every spatial plane `(n, c)` of `x` by `s[n, c]`.
pub fn mul_channel_scale<T: Scalar>(x: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
    check_channel_scale(x.shape(), s.shape())?;
    let plane = x.shape().plane();
    let mut out = x.data().to_vec();
    for (chunk, &sv) in out.chunks_mut(plane).zip(s.data()) {
        chunk.iter_mut().for_each(|v| *v *= sv);
    }
    Tensor::from_vec(x.shape(), out)
}

/// Supported bilinear resize factors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResizeFactor {
    Half,
    Double,
    Quadruple,
}

impl ResizeFactor {
    pub fn apply(self, n: usize) -> Result<usize> {
        match self {
            ResizeFactor::Half if n % 2 == 0 => Ok(n / 2),
            ResizeFactor::Half => Err(Error::config(format!("cannot halve odd size {n}"))),
            ResizeFactor::Double => Ok(n * 2),
            ResizeFactor::Quadruple => Ok(n * 4),
        }
    }

    pub fn from_f64(f: f64) -> Result<Self> {
        match f {
            f if f == 0.5 => Ok(ResizeFactor::Half),
            f if f == 2.0 => Ok(ResizeFactor::Double),
            f if f == 4.0 => Ok(ResizeFactor::Quadruple),
            _ => Err(Error::config(format!("unsupported resize factor {f}"))),
        }
    }
}

/// Two interpolation taps `(i0, i1, w1)` per output coordinate, half-pixel centers.
pub(crate) fn bilinear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn bilinear_resize<T: Scalar>(x: &Tensor<T>, factor: ResizeFactor) -> Result<Tensor<T>> {
    let s = x.shape();
    let os = s.with_spatial(factor.apply(s.height)?, factor.apply(s.width)?);
    let ty = bilinear_taps(s.height, os.height);
    let tx = bilinear_taps(s.width, os.width);
    let mut out = Vec::with_capacity(os.numel());
    for p in x.data().chunks(s.plane()) {
        for &(y0, y1, fy) in &ty {
            let (fy, gy) = (T::lit(fy), T::lit(1.0 - fy));
            for &(x0, x1, fx) in &tx {
                let (fx, gx) = (T::lit(fx), T::lit(1.0 - fx));
                let top = p[y0 * s.width + x0] * gx + p[y0 * s.width + x1] * fx;
                let bot = p[y1 * s.width + x0] * gx + p[y1 * s.width + x1] * fx;
                out.push(top * gy + bot * fy);
            }
        }
    }
    Tensor::from_vec(os, out)
}

pub(crate) fn bilinear_resize_backward<T: Scalar>(in_shape: Shape, factor: ResizeFactor, gout: &[T]) -> Result<Vec<T>> {
    let os = in_shape.with_spatial(factor.apply(in_shape.height)?, factor.apply(in_shape.width)?);
    let ty = bilinear_taps(in_shape.height, os.height);
    let tx = bilinear_taps(in_shape.width, os.width);
    let w = in_shape.width;
    let mut gx = vec![T::zero(); in_shape.numel()];
    for (dst, g) in gx.chunks_mut(in_shape.plane()).zip(gout.chunks(os.plane())) {
        let mut gi = g.iter();
        for &(y0, y1, fy) in &ty {
            let (fy, gy) = (T::lit(fy), T::lit(1.0 - fy));
            for &(x0, x1, fx) in &tx {
                let (fx, gxw) = (T::lit(fx), T::lit(1.0 - fx));
                let v = *gi.next().unwrap();
                dst[y0 * w + x0] += v * gy * gxw;
                dst[y0 * w + x1] += v * gy * fx;
                dst[y1 * w + x0] += v * fy * gxw;
                dst[y1 * w + x1] += v * fy * fx;
            }
        }
    }
    Ok(gx)
}

/// Source index in the input of every output element of a pixel shuffle.
pub(crate) fn pixel_shuffle_index(in_shape: Shape, r: usize) -> Result<(Shape, Vec<usize>)> {
    if r == 0 || in_shape.channels % (r * r) != 0 {
        return Err(Error::config(format!(
            "pixel shuffle by {r} needs channels divisible by {}, got {}",
            r * r,
            in_shape.channels
        )));
    }
    let c = in_shape.channels / (r * r);
    let os = Shape::new(in_shape.batch, c, in_shape.height * r, in_shape.width * r);
    let mut idx = Vec::with_capacity(os.numel());
    for n in 0..os.batch {
        for ch in 0..c {
            for y in 0..os.height {
                for x in 0..os.width {
                    let src_c = ch * r * r + (y % r) * r + (x % r);
                    idx.push(in_shape.offset(n, src_c, y / r, x / r));
                }
            }
        }
    }
    Ok((os, idx))
}

/// Rearranges `(b, c·r², h, w)` into `(b, c, h·r, w·r)`.
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (os, idx) = pixel_shuffle_index(x.shape(), r)?;
    let xd = x.data();
    Tensor::from_vec(os, idx.iter().map(|&i| xd[i]).collect())
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if r == 0 || s.height % r != 0 || s.width % r != 0 {
        return Err(Error::config(format!(
            "pixel unshuffle by {r} needs spatial dims divisible by {r}, got {}x{}",
            s.height, s.width
        )));
    }
    let in_shape = Shape::new(s.batch, s.channels * r * r, s.height / r, s.width / r);
    let (_, idx) = pixel_shuffle_index(in_shape, r)?;
    let mut out = vec![T::zero(); in_shape.numel()];
    for (o, &i) in idx.iter().enumerate() {
        out[i] = x.data()[o];
    }
    Tensor::from_vec(in_shape, out)
}

/// Mean absolute error over all elements.
pub fn l1_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    same_shape(pred.shape(), target.shape(), "l1_loss")?;
    if pred.is_empty() {
        return Err(Error::config("l1_loss of empty tensors"));
    }
    let sum: T = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| (a - b).abs())
        .sum();
    Ok(sum / T::from_usize(pred.len()).unwrap())
}

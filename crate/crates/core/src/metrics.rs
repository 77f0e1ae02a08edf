//! Image fidelity metrics and error heatmaps.
//!
//! All metrics take images on the `[0, 255]` scale and accumulate in `f64`.
//! Images are `1 × C × H × W` tensors (a batch dimension above one is
//! treated as more pixels, except by SSIM, which averages per image).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const MAX_VALUE: f64 = 255.0;
pub const PSNR_CAP_DB: f64 = 100.0;
const MSE_FLOOR: f64 = 1e-10;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::config(format!("metric shape mismatch: {} vs {}", a.shape(), b.shape())));
    }
    if a.is_empty() {
        return Err(Error::config("metric on an empty image"));
    }
    Ok(())
}

pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape(a, b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x.to_f64_lossy() - y.to_f64_lossy()).powi(2))
        .sum();
    Ok(s / a.len() as f64)
}

pub fn mae<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape(a, b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x.to_f64_lossy() - y.to_f64_lossy()).abs())
        .sum();
    Ok(s / a.len() as f64)
}

/// `10 · log₁₀(255² / mse)`, capped at 100 dB.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < MSE_FLOOR {
        PSNR_CAP_DB
    } else {
        (10.0 * (MAX_VALUE * MAX_VALUE / mse).log10()).min(PSNR_CAP_DB)
    }
}

pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `h × w` plane with the SSIM window.
fn filter_valid(plane: &[f64], h: usize, w: usize, win: &[f64]) -> Vec<f64> {
    let k = win.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| win[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| win[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM of two single-channel planes.
pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::config(format!(
            "SSIM needs at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels, image is {h}×{w}"
        )));
    }
    let win = gaussian_window();
    let c1 = (SSIM_K1 * MAX_VALUE).powi(2);
    let c2 = (SSIM_K2 * MAX_VALUE).powi(2);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, &win);
    let mu_b = filter_valid(b, h, w, &win);
    let aa = filter_valid(&prod(a, a), h, w, &win);
    let bb = filter_valid(&prod(b, b), h, w, &win);
    let ab = filter_valid(&prod(a, b), h, w, &win);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

/// BT.601 luma of an RGB pixel.
pub fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Single-channel planes SSIM is computed on: the luma plane for RGB images,
/// each channel otherwise.
fn ssim_planes<T: Scalar>(t: &Tensor<T>, n: usize) -> Vec<Vec<f64>> {
    let s = t.shape();
    let chan = |c: usize| t.plane(n, c).iter().map(|v| v.to_f64_lossy()).collect::<Vec<f64>>();
    if s.channels == 3 {
        let (r, g, b) = (chan(0), chan(1), chan(2));
        vec![(0..r.len()).map(|i| luma(r[i], g[i], b[i])).collect()]
    } else {
        (0..s.channels).map(chan).collect()
    }
}

/// Mean SSIM (11×11 Gaussian window, σ = 1.5). RGB images are compared on luma;
/// other channel counts average the per-channel scores.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape(a, b)?;
    let s = a.shape();
    let mut total = 0.0;
    let mut count = 0usize;
    for n in 0..s.batch {
        for (pa, pb) in ssim_planes(a, n).iter().zip(ssim_planes(b, n).iter()) {
            total += ssim_plane(pa, pb, s.height, s.width)?;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Spectral angle summary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralAngle {
    /// Mean angle in radians over non-degenerate pixels.
    pub mean_rad: f64,
    /// Pixels skipped because either spectral vector was zero.
    pub skipped: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn spectral_angle<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<SpectralAngle> {
    same_shape(a, b)?;
    let s = a.shape();
    let mut total = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for n in 0..s.batch {
        for p in 0..s.plane() {
            let x: Vec<f64> = (0..s.channels).map(|c| a.plane(n, c)[p].to_f64_lossy()).collect();
            let y: Vec<f64> = (0..s.channels).map(|c| b.plane(n, c)[p].to_f64_lossy()).collect();
            let (na, nb) = (norm(&x), norm(&y));
            if na == 0.0 || nb == 0.0 {
                skipped += 1;
                continue;
            }
            // 2·atan2(‖x̂ − ŷ‖, ‖x̂ + ŷ‖) stays accurate near 0 and π, unlike acos.
            let diff: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u / na - v / nb).collect();
            let sum: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u / na + v / nb).collect();
            total += 2.0 * norm(&diff).atan2(norm(&sum));
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::config("spectral angle undefined: every pixel is a zero vector"));
    }
    Ok(SpectralAngle {
        mean_rad: total / used as f64,
        skipped,
    })
}

/// Mean spectral angle in radians.
pub fn sam<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    Ok(spectral_angle(a, b)?.mean_rad)
}

/// Metrics of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    pub image_id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
    pub mae: f64,
    /// `NaN` when every pixel of either image is black.
    pub sam: f64,
}

impl ImageMetrics {
    pub fn compute<T: Scalar>(image_id: impl Into<String>, pred: &Tensor<T>, label: &Tensor<T>) -> Result<Self> {
        let mse = mse(pred, label)?;
        Ok(Self {
            image_id: image_id.into(),
            psnr: psnr_from_mse(mse),
            ssim: ssim(pred, label)?,
            mse,
            mae: mae(pred, label)?,
            sam: spectral_angle(pred, label).map_or(f64::NAN, |s| s.mean_rad),
        })
    }
}

/// Per-image records plus their means.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub records: Vec<ImageMetrics>,
}

impl MetricsReport {
    pub fn push(&mut self, m: ImageMetrics) {
        self.records.push(m);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Field-wise mean over all records (`NaN` SAM entries excluded).
    pub fn mean(&self) -> ImageMetrics {
        let n = self.records.len().max(1) as f64;
        let avg = |f: fn(&ImageMetrics) -> f64| self.records.iter().map(f).sum::<f64>() / n;
        let sams: Vec<f64> = self.records.iter().map(|r| r.sam).filter(|v| v.is_finite()).collect();
        ImageMetrics {
            image_id: "mean".into(),
            psnr: avg(|r| r.psnr),
            ssim: avg(|r| r.ssim),
            mse: avg(|r| r.mse),
            mae: avg(|r| r.mae),
            sam: if sams.is_empty() {
                f64::NAN
            } else {
                sams.iter().sum::<f64>() / sams.len() as f64
            },
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("image_id,psnr,ssim,mse,mae,sam\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{:.6},{:.6},{:.6},{:.6},{:.6}", r.image_id, r.psnr, r.ssim, r.mse, r.mae, r.sam);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Blue → yellow → red colour for `t ∈ [0, 1]`: hue sweeps 240° → 0° at full
/// saturation, so blue marks small errors and red the largest.
pub fn colormap(t: f64) -> [u8; 3] {
    let hue = 240.0 * (1.0 - t.clamp(0.0, 1.0));
    let sector = hue / 60.0;
    let x = 1.0 - (sector % 2.0 - 1.0).abs();
    let (r, g, b) = match sector as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        _ => (0.0, x, 1.0),
    };
    let q = |v: f64| (v * 255.0).round() as u8;
    [q(r), q(g), q(b)]
}

/// Hue in degrees of a fully saturated colour, the inverse of [`colormap`]'s hue sweep.
pub fn hue_degrees(rgb: [u8; 3]) -> f64 {
    let [r, g, b] = rgb.map(|v| v as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    if d == 0.0 {
        return 0.0;
    }
    let h = if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    60.0 * h
}

/// Per-pixel mean absolute error over channels, normalised by its own maximum
/// and rendered with [`colormap`]. Uses the first image of the batch.
pub fn error_heatmap<T: Scalar>(pred: &Tensor<T>, label: &Tensor<T>) -> Result<RgbImage> {
    same_shape(pred, label)?;
    let s = pred.shape();
    let mut err = vec![0.0f64; s.plane()];
    for c in 0..s.channels {
        for (e, (p, l)) in err.iter_mut().zip(pred.plane(0, c).iter().zip(label.plane(0, c))) {
            *e += (p.to_f64_lossy() - l.to_f64_lossy()).abs() / s.channels as f64;
        }
    }
    let max = err.iter().cloned().fold(0.0, f64::max);
    let mut img = RgbImage::new(s.width as u32, s.height as u32);
    for (i, e) in err.iter().enumerate() {
        let t = if max > 0.0 { e / max } else { 0.0 };
        img.put_pixel((i % s.width) as u32, (i / s.width) as u32, Rgb(colormap(t)));
    }
    Ok(img)
}

pub fn save_heatmap<T: Scalar>(pred: &Tensor<T>, label: &Tensor<T>, path: &Path) -> Result<()> {
    error_heatmap(pred, label)?.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Maps a `[0, 1]` model output to the evaluation scale, clamping first.
pub fn to_eval_scale<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    t.map(|v| v.max(T::zero()).min(T::one()) * T::lit(MAX_VALUE))
}

//! Procedural colour tiles for smoke tests and demos.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Smooth colour gradient overlaid with a few soft discs; deterministic in `seed`.
pub fn toy_tile(size: u32, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: [[f32; 3]; 2] = [rng.gen(), rng.gen()].map(|c: [f32; 3]| c);
    let angle: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let discs: Vec<(f32, f32, f32, [f32; 3])> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.1..0.9),
                rng.gen_range(0.1..0.9),
                rng.gen_range(0.08..0.25),
                rng.gen(),
            )
        })
        .collect();
    let n = size as f32;
    RgbImage::from_fn(size, size, |x, y| {
        let (u, v) = (x as f32 / n, y as f32 / n);
        let t = (0.5 + 0.5 * ((u - 0.5) * dx + (v - 0.5) * dy) * 1.4).clamp(0.0, 1.0);
        let mut c = [0.0f32; 3];
        for k in 0..3 {
            c[k] = base[0][k] * (1.0 - t) + base[1][k] * t;
        }
        for &(cx, cy, r, col) in &discs {
            let d = ((u - cx).powi(2) + (v - cy).powi(2)).sqrt();
            let w = (1.0 - ((d - r) / 0.03).clamp(0.0, 1.0)) * 0.8;
            for k in 0..3 {
                c[k] = c[k] * (1.0 - w) + col[k] * w;
            }
        }
        Rgb(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
    })
}

/// Writes `count` tiles as `root/rgb/toy_NNN.png`.
pub fn write_toy_corpus(root: &Path, count: usize, size: u32, seed: u64) -> Result<()> {
    let dir = root.join("rgb");
    fs::create_dir_all(&dir)?;
    for i in 0..count {
        let path = dir.join(format!("toy_{i:03}.png"));
        toy_tile(size, seed.wrapping_add(i as u64))
            .save(&path)
            .map_err(|source| Error::Image { path, source })?;
    }
    Ok(())
}

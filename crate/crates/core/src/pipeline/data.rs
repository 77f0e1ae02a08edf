//! Tile corpus ingestion and the degradation pipeline.
//!
//! A corpus root holds `rgb/*.png` colour tiles and, optionally, `pan/*.png`
//! single-band tiles with matching file names. Missing PAN tiles are
//! synthesised as BT.601 luma. Inputs are bicubic downsamples of the PAN
//! tile by the task's factor.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Luma};

use crate::backbone::Task;
use crate::error::{Error, Result};
use crate::metrics::luma;
use crate::tensor::Tensor;

/// Smallest accepted tile side.
pub const MIN_TILE: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    /// Files whose name hash falls in the 90 % training bucket.
    Train,
    /// The remaining 10 %.
    Val,
    /// Every tile under the root (test corpora live in their own directory).
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" | "all" => Ok(Split::Test),
            _ => Err(Error::config(format!("unknown split {s:?} (train, val or test)"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub root: PathBuf,
    pub split: Split,
    /// Label tile side; larger images are centre-cropped to it.
    pub tile: usize,
    pub task: Task,
}

/// One training or evaluation pair, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub input: Tensor,
    pub target: Tensor,
}

/// 64-bit FNV-1a, used for the file-name split so it is stable across builds.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

pub fn split_of(file_name: &str) -> Split {
    if fnv1a(file_name.as_bytes()) % 10 == 0 {
        Split::Val
    } else {
        Split::Train
    }
}

fn in_split(name: &str, split: Split) -> bool {
    split == Split::Test || split_of(name) == split
}

type Plane = ImageBuffer<Luma<f32>, Vec<f32>>;

fn crop_offset(size: usize, tile: usize) -> u32 {
    ((size - tile) / 2) as u32
}

fn load_rgb(path: &Path, tile: usize) -> Result<[Plane; 3]> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    check_tile(path, w, h, tile)?;
    let (ox, oy) = (crop_offset(w, tile), crop_offset(h, tile));
    let t = tile as u32;
    Ok([0, 1, 2].map(|c| Plane::from_fn(t, t, |x, y| Luma([img.get_pixel(ox + x, oy + y)[c] as f32 / 255.0]))))
}

fn load_pan(path: &Path, tile: usize) -> Result<Plane> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    check_tile(path, w, h, tile)?;
    let (ox, oy) = (crop_offset(w, tile), crop_offset(h, tile));
    let t = tile as u32;
    Ok(Plane::from_fn(t, t, |x, y| Luma([img.get_pixel(ox + x, oy + y)[0] as f32 / 255.0])))
}

fn check_tile(path: &Path, w: usize, h: usize, tile: usize) -> Result<()> {
    if w != h {
        return Err(Error::config(format!("{}: tile is {w}×{h}, expected square", path.display())));
    }
    if w < tile {
        return Err(Error::config(format!("{}: tile side {w} is below {tile}", path.display())));
    }
    Ok(())
}

/// BT.601 luma of three colour planes.
pub fn synthesize_pan(rgb: &[Plane; 3]) -> Plane {
    Plane::from_fn(rgb[0].width(), rgb[0].height(), |x, y| {
        let px = |c: usize| rgb[c].get_pixel(x, y)[0] as f64;
        Luma([luma(px(0), px(1), px(2)) as f32])
    })
}

/// Bicubic (Catmull-Rom) downsample by an integer factor.
pub fn downsample(plane: &Plane, factor: usize) -> Plane {
    if factor == 1 {
        return plane.clone();
    }
    let (w, h) = (plane.width() / factor as u32, plane.height() / factor as u32);
    imageops::resize(plane, w, h, FilterType::CatmullRom)
}

pub fn plane_to_tensor(planes: &[&Plane]) -> Tensor {
    let (w, h) = (planes[0].width() as usize, planes[0].height() as usize);
    Tensor::from_fn([1, planes.len(), h, w], |_, c, y, x| planes[c].get_pixel(x as u32, y as u32)[0])
}

/// Builds the `(input, target)` pair of `task` from a colour tile and its PAN band.
pub fn make_sample(id: String, rgb: &[Plane; 3], pan: &Plane, task: Task) -> Sample {
    let input = downsample(pan, task.sr_factor());
    let target = if task.out_channels() == 3 {
        plane_to_tensor(&[&rgb[0], &rgb[1], &rgb[2]])
    } else {
        plane_to_tensor(&[pan])
    };
    Sample {
        id,
        input: plane_to_tensor(&[&input]),
        target,
    }
}

fn load_sample(spec: &DatasetSpec, rgb_path: &Path, name: &str) -> Result<Sample> {
    let rgb = load_rgb(rgb_path, spec.tile)?;
    let pan_path = spec.root.join("pan").join(name);
    let pan = if pan_path.is_file() {
        load_pan(&pan_path, spec.tile)?
    } else {
        synthesize_pan(&rgb)
    };
    let id = Path::new(name)
        .file_stem()
        .map_or_else(|| name.to_string(), |s| s.to_string_lossy().into_owned());
    Ok(make_sample(id, &rgb, &pan, spec.task))
}

/// Loads every tile of the split in lexicographic file-name order.
/// Unreadable tiles are skipped with a warning.
pub fn ingest(spec: &DatasetSpec) -> Result<Vec<Sample>> {
    if spec.tile < MIN_TILE {
        return Err(Error::config(format!("tile size {} is below {MIN_TILE}", spec.tile)));
    }
    if spec.tile % spec.task.sr_factor() != 0 {
        return Err(Error::config(format!(
            "tile size {} is not divisible by the {} factor {}",
            spec.tile,
            spec.task,
            spec.task.sr_factor()
        )));
    }
    let rgb_dir = spec.root.join("rgb");
    let entries = fs::read_dir(&rgb_dir)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", rgb_dir.display())))?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.to_ascii_lowercase().ends_with(".png"))
        .filter(|n| in_split(n, spec.split))
        .collect();
    names.sort();

    let mut samples = Vec::with_capacity(names.len());
    for name in names {
        match load_sample(spec, &rgb_dir.join(&name), &name) {
            Ok(s) => samples.push(s),
            Err(e) => log::warn!("skipping {name}: {e}"),
        }
    }
    if samples.is_empty() {
        return Err(Error::EmptySplit(format!("{} split of {}", spec.split, spec.root.display())));
    }
    Ok(samples)
}

/// Reads a PNG as a `1 × 1 × H × W` tensor in `[0, 1]` (colour images go through luma).
pub fn read_gray(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Ok(Tensor::from_fn([1, 1, h, w], |_, _, y, x| {
        let p = rgb.get_pixel(x as u32, y as u32);
        let v = luma(p[0] as f64, p[1] as f64, p[2] as f64) / 255.0;
        v as f32
    }))
}

/// Writes a 1- or 3-channel `[0, 1]` tensor (first batch item) as an 8-bit PNG.
pub fn write_png(t: &Tensor, path: &Path) -> Result<()> {
    let s = t.shape();
    let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let (w, h) = (s.width as u32, s.height as u32);
    let res = match s.channels {
        1 => image::GrayImage::from_fn(w, h, |x, y| Luma([q(t.at(0, 0, y as usize, x as usize))])).save(path),
        3 => image::RgbImage::from_fn(w, h, |x, y| {
            image::Rgb([0, 1, 2].map(|c| q(t.at(0, c, y as usize, x as usize))))
        })
        .save(path),
        c => return Err(Error::config(format!("cannot write a {c}-channel image"))),
    };
    res.map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

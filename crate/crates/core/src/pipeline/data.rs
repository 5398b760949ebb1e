use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{GrayImage, RgbImage};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// One image with its binary mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `[3, H, W]` in `[0, 1]`.
    pub image: Tensor<f64>,
    /// `[1, H, W]` with values in `{0, 1}`.
    pub mask: Tensor<f64>,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Tensor<f64>, mask: Tensor<f64>) -> Result<Self> {
        let (i, m) = (image.shape(), mask.shape());
        if i.len() != 3 || i[0] != 3 || m.len() != 3 || m[0] != 1 || i[1..] != m[1..] {
            return dim_err(format!("sample needs image [3, H, W] and mask [1, H, W], got {i:?} and {m:?}"));
        }
        if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Contract("mask values must be 0 or 1".into()));
        }
        Ok(Sample { id: id.into(), image, mask })
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    pub fn foreground(&self) -> usize {
        self.mask.data().iter().filter(|&&v| v == 1.0).count()
    }
}

/// Stack samples into `[B, 3, H, W]` images and `[B, 1, H, W]` masks.
pub fn batch<T: Scalar>(samples: &[&Sample]) -> Result<(Tensor<T>, Tensor<T>)> {
    let lift = |t: &Tensor<f64>| {
        let mut shape = vec![1];
        shape.extend_from_slice(t.shape());
        t.cast::<T>().reshape(&shape)
    };
    let images = samples.iter().map(|s| lift(&s.image)).collect::<Result<Vec<_>>>()?;
    let masks = samples.iter().map(|s| lift(&s.mask)).collect::<Result<Vec<_>>>()?;
    Ok((Tensor::stack_batch(&images)?, Tensor::stack_batch(&masks)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub min_blobs: usize,
    pub max_blobs: usize,
    /// Accepted range of the foreground fraction of every mask.
    pub min_fraction: f64,
    pub max_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { min_blobs: 1, max_blobs: 3, min_fraction: 0.02, max_fraction: 0.5 }
    }
}

/// A fresh generator for the `index`-th draw from a stream seeded by `seed`.
pub(crate) fn child_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index + 1);
    ChaCha8Rng::seed_from_u64(rng.next_u64())
}

struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    cos: f64,
    sin: f64,
    level: [f64; 3],
}

impl Ellipse {
    fn random(rng: &mut ChaCha8Rng, size: f64) -> Self {
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let base: f64 = rng.random_range(0.55..0.9);
        Ellipse {
            cy: rng.random_range(0.2..0.8) * size,
            cx: rng.random_range(0.2..0.8) * size,
            ry: rng.random_range(0.1..0.3) * size,
            rx: rng.random_range(0.1..0.3) * size,
            cos: angle.cos(),
            sin: angle.sin(),
            level: [0, 1, 2].map(|_| (base + rng.random_range(-0.05..0.05)).min(1.0)),
        }
    }

    /// Normalized radius: below 1 inside the ellipse.
    fn radius(&self, y: f64, x: f64) -> f64 {
        let (dy, dx) = (y + 0.5 - self.cy, x + 0.5 - self.cx);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        ((u / self.rx).powi(2) + (v / self.ry).powi(2)).sqrt()
    }
}

/// Dark speckled background with bright soft-edged ellipses; the mask is
/// the exact union of the ellipse interiors.
pub fn synth_sample(id: impl Into<String>, size: usize, rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Result<Sample> {
    let s = size as f64;
    let px = size * size;
    let blobs = rng.random_range(cfg.min_blobs..=cfg.max_blobs);
    let mut shapes = Vec::new();
    let mut mask = vec![0.0; px];
    for attempt in 0.. {
        if attempt == 1000 {
            return Err(Error::Contract(format!(
                "could not place blobs within the mask fraction bounds at size {size}"
            )));
        }
        shapes = (0..blobs).map(|_| Ellipse::random(rng, s)).collect::<Vec<_>>();
        for (i, m) in mask.iter_mut().enumerate() {
            let (y, x) = ((i / size) as f64, (i % size) as f64);
            *m = if shapes.iter().any(|e| e.radius(y, x) <= 1.0) { 1.0 } else { 0.0 };
        }
        let frac = mask.iter().sum::<f64>() / px as f64;
        if blobs == 0 || (cfg.min_fraction..=cfg.max_fraction).contains(&frac) {
            break;
        }
    }
    let bg = rng.random_range(0.08..0.22);
    let noise = Normal::new(0.0, 0.03).expect("valid sigma");
    let mut image = vec![0.0; 3 * px];
    for i in 0..px {
        let (y, x) = ((i / size) as f64, (i % size) as f64);
        let speckle = bg * rng.random_range(0.6..1.4);
        // soft edges fade over about a pixel outside the support
        let weights: Vec<f64> = shapes
            .iter()
            .map(|e| {
                let d = (e.radius(y, x) - 1.0) * e.rx.min(e.ry);
                1.0 / (1.0 + (3.0 * d).exp())
            })
            .collect();
        for c in 0..3 {
            let mut v = speckle;
            for (e, w) in shapes.iter().zip(&weights) {
                v += w * (e.level[c] - v);
            }
            image[c * px + i] = (v + noise.sample(rng)).clamp(0.0, 1.0);
        }
    }
    Sample::new(id, Tensor::new(&[3, size, size], image)?, Tensor::new(&[1, size, size], mask)?)
}

/// `n` synthetic samples of `size` x `size`, fully determined by `seed`.
pub fn synth_dataset(n: usize, size: usize, seed: u64) -> Result<Vec<Sample>> {
    synth_dataset_with(n, size, seed, &SynthConfig::default())
}

pub fn synth_dataset_with(n: usize, size: usize, seed: u64, cfg: &SynthConfig) -> Result<Vec<Sample>> {
    if n == 0 || size < 16 {
        return Err(Error::Config(format!("synthetic data needs n >= 1 and size >= 16, got n={n}, size={size}")));
    }
    if cfg.min_blobs > cfg.max_blobs {
        return Err(Error::Config("min_blobs exceeds max_blobs".into()));
    }
    let width = n.to_string().len().max(3);
    (0..n).map(|i| synth_sample(format!("synth_{i:0width$}"), size, &mut child_rng(seed, i as u64), cfg)).collect()
}

fn format_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Format { path: path.display().to_string(), msg: e.to_string() }
}

const EXTENSIONS: [&str; 2] = ["png", "pgm"];

fn find_mask(dir: &Path, id: &str) -> Option<PathBuf> {
    EXTENSIONS.iter().map(|e| dir.join(format!("{id}.{e}"))).find(|p| p.is_file())
}

/// Read `images/<id>.{png,pgm}` with `masks/<id>.{png,pgm}` under `dir`,
/// sorted by id. Images are scaled to `[0, 1]` (grayscale replicated to three
/// channels), masks binarized at `> 127`. With `size`, images are resized
/// bilinearly and masks by nearest neighbour to `size` x `size`.
pub fn load_dataset(dir: &Path, size: Option<usize>) -> Result<Vec<Sample>> {
    let images = dir.join("images");
    if !images.is_dir() {
        return Ok(Vec::new());
    }
    let mut entries: Vec<(String, PathBuf)> = Vec::new();
    for e in fs::read_dir(&images)? {
        let path = e?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        if path.is_file() && ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| format_err(&path, "file name is not valid UTF-8"))?;
            entries.push((id.to_string(), path.clone()));
        }
    }
    entries.sort();
    let masks = dir.join("masks");
    entries
        .into_iter()
        .map(|(id, path)| {
            let mask_path = find_mask(&masks, &id).ok_or_else(|| Error::MissingMask(id.clone()))?;
            let mut rgb = image::open(&path).map_err(|e| format_err(&path, e))?.to_rgb8();
            let mut gray = image::open(&mask_path).map_err(|e| format_err(&mask_path, e))?.to_luma8();
            if let Some(s) = size {
                let s = s as u32;
                rgb = imageops::resize(&rgb, s, s, FilterType::Triangle);
                gray = imageops::resize(&gray, s, s, FilterType::Nearest);
            }
            if rgb.dimensions() != gray.dimensions() {
                return Err(format_err(
                    &mask_path,
                    format!("mask is {:?} but image `{id}` is {:?}", gray.dimensions(), rgb.dimensions()),
                ));
            }
            Sample::new(id, rgb_to_tensor(&rgb), gray_to_mask(&gray))
        })
        .collect()
}

fn rgb_to_tensor(img: &RgbImage) -> Tensor<f64> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            data[c * h * w + y as usize * w + x as usize] = p.0[c] as f64 / 255.0;
        }
    }
    Tensor::new(&[3, h, w], data).expect("sized buffer")
}

fn gray_to_mask(img: &GrayImage) -> Tensor<f64> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| if p.0[0] > 127 { 1.0 } else { 0.0 }).collect();
    Tensor::new(&[1, h, w], data).expect("sized buffer")
}

/// 8-bit grayscale image of a `[H, W]` plane (given as data and width), with
/// values in `[0, 1]` mapped to `0..=255`.
pub fn plane_to_gray(data: &[f64], h: usize, w: usize) -> GrayImage {
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([(data[y as usize * w + x as usize].clamp(0.0, 1.0) * 255.0).round() as u8])
    })
}

/// Write samples as `images/<id>.png` (8-bit RGB) and `masks/<id>.png`
/// (8-bit, 0/255).
pub fn save_dataset(dir: &Path, samples: &[Sample]) -> Result<()> {
    let (images, masks) = (dir.join("images"), dir.join("masks"));
    fs::create_dir_all(&images)?;
    fs::create_dir_all(&masks)?;
    for s in samples {
        let (h, w) = (s.height(), s.width());
        let d = s.image.data();
        let rgb = RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let i = y as usize * w + x as usize;
            image::Rgb([0, 1, 2].map(|c| (d[c * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8))
        });
        let p = images.join(format!("{}.png", s.id));
        rgb.save(&p).map_err(|e| format_err(&p, e))?;
        let p = masks.join(format!("{}.png", s.id));
        plane_to_gray(s.mask.data(), h, w).save(&p).map_err(|e| format_err(&p, e))?;
    }
    Ok(())
}

/// Shuffle by `seed` and cut after `ceil(n * a / (a + b))` items for ratio
/// `a:b`.
pub fn split<S: Clone>(items: &[S], ratio: [usize; 2], seed: u64) -> (Vec<S>, Vec<S>) {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut child_rng(seed, 0));
    let total = (ratio[0] + ratio[1]).max(1);
    let cut = (items.len() * ratio[0]).div_ceil(total);
    let pick = |r: &[usize]| r.iter().map(|&i| items[i].clone()).collect();
    (pick(&idx[..cut]), pick(&idx[cut..]))
}

/// Parse `"a:b"`. `b` may be zero (no validation split); `a` may not.
pub fn parse_ratio(s: &str) -> Result<[usize; 2]> {
    let bad = || Error::Config(format!("split ratio must look like `4:1`, got `{s}`"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if a == 0 {
        return Err(bad());
    }
    Ok([a, b])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub hflip: bool,
    pub vflip: bool,
    pub rotate: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { hflip: true, vflip: true, rotate: true }
    }
}

impl AugmentConfig {
    pub const NONE: AugmentConfig = AugmentConfig { hflip: false, vflip: false, rotate: false };

    pub fn any(&self) -> bool {
        self.hflip || self.vflip || self.rotate
    }
}

/// One drawn transform: flips, then a counter-clockwise rotation by
/// `quarter_turns * 90` degrees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Transform {
    pub hflip: bool,
    pub vflip: bool,
    pub quarter_turns: u8,
}

impl Transform {
    /// Every draw is taken whatever the flags, so disabling one transform
    /// leaves the others' outcomes unchanged. Non-square samples only turn
    /// by 0 or 180 degrees.
    pub fn draw(rng: &mut impl Rng, cfg: &AugmentConfig, square: bool) -> Self {
        let h = rng.random_bool(0.5);
        let v = rng.random_bool(0.5);
        let mut k = rng.random_range(0..4u8);
        if !square {
            k &= 2;
        }
        Transform { hflip: h && cfg.hflip, vflip: v && cfg.vflip, quarter_turns: if cfg.rotate { k } else { 0 } }
    }

    pub fn is_identity(&self) -> bool {
        !self.hflip && !self.vflip && self.quarter_turns == 0
    }

    /// Apply to a `[C, H, W]` tensor.
    pub fn apply(&self, t: &Tensor<f64>) -> Tensor<f64> {
        let mut out = t.clone();
        if self.hflip {
            out = flip(&out, false);
        }
        if self.vflip {
            out = flip(&out, true);
        }
        for _ in 0..self.quarter_turns {
            out = rot90(&out);
        }
        out
    }
}

fn flip(t: &Tensor<f64>, vertical: bool) -> Tensor<f64> {
    let [c, h, w] = [t.shape()[0], t.shape()[1], t.shape()[2]];
    let d = t.data();
    let mut out = vec![0.0; d.len()];
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = if vertical { (h - 1 - y, x) } else { (y, w - 1 - x) };
                out[(ci * h + y) * w + x] = d[(ci * h + sy) * w + sx];
            }
        }
    }
    Tensor::new(t.shape(), out).expect("same shape")
}

/// Quarter turn counter-clockwise: `out[y][x] = in[x][W - 1 - y]`.
fn rot90(t: &Tensor<f64>) -> Tensor<f64> {
    let [c, h, w] = [t.shape()[0], t.shape()[1], t.shape()[2]];
    let d = t.data();
    let mut out = vec![0.0; d.len()];
    for ci in 0..c {
        for y in 0..w {
            for x in 0..h {
                out[(ci * w + y) * h + x] = d[(ci * h + x) * w + (w - 1 - y)];
            }
        }
    }
    Tensor::new(&[c, w, h], out).expect("rotated shape")
}

/// Random flips and right-angle rotation, applied identically to image and
/// mask.
pub fn augment(sample: &Sample, rng: &mut impl Rng, cfg: &AugmentConfig) -> Sample {
    let tf = Transform::draw(rng, cfg, sample.height() == sample.width());
    Sample { id: sample.id.clone(), image: tf.apply(&sample.image), mask: tf.apply(&sample.mask) }
}

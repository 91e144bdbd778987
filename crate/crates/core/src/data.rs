//! Samples, the synthetic shapes corpus, folder loading and augmentation.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sodnet_tensor::{Shape, Tensor};

use crate::error::{Result, SodError};
use crate::grid::{DetailLabel, Grid, GroundTruth};
use crate::imageio::{list_images, read_mask, read_rgb, resize_nearest, write_mask, write_rgb, RgbImage};
use crate::labelgen::decompose_detail;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: RgbImage,
    pub gt: GroundTruth,
    pub detail: DetailLabel,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: RgbImage, gt: GroundTruth) -> Result<Self> {
        if image.dims() != gt.dims() {
            return Err(SodError::ShapeMismatch { op: "sample", a: image.dims(), b: gt.dims() });
        }
        let detail = decompose_detail(&gt);
        Ok(Sample { id: id.into(), image, gt, detail })
    }
}

/// In-memory dataset; cheap to share across loader threads.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Deterministic split: the last `n_val` samples (in id order) go to the second set.
    pub fn split_tail(mut self, n_val: usize) -> (Dataset, Dataset) {
        let cut = self.samples.len().saturating_sub(n_val);
        let val = self.samples.split_off(cut);
        (self, Dataset { samples: val })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Ellipse,
    Rectangle,
    Triangle,
    Blob,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_images: usize,
    pub height: usize,
    pub width: usize,
    pub shapes: (usize, usize),
    pub kinds: Vec<ShapeKind>,
    /// Range of foreground/background luminance contrast.
    pub contrast: (f64, f64),
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise: f64,
    /// Fraction of images with several objects.
    pub multi_fraction: f64,
    /// Fraction of images whose object crosses the border.
    pub border_fraction: f64,
    pub seed: u64,
    /// Index of the first image; lets disjoint corpora share a seed.
    #[serde(default)]
    pub first_index: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_images: 500,
            height: 96,
            width: 96,
            shapes: (1, 3),
            kinds: vec![ShapeKind::Ellipse, ShapeKind::Rectangle, ShapeKind::Triangle, ShapeKind::Blob],
            contrast: (0.25, 0.6),
            noise: 0.04,
            multi_fraction: 0.3,
            border_fraction: 0.2,
            seed: 7,
            first_index: 0,
        }
    }
}

#[derive(Clone, Debug)]
enum Figure {
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64, angle: f64 },
    Rectangle { cy: f64, cx: f64, hy: f64, hx: f64, angle: f64 },
    Triangle { pts: [(f64, f64); 3] },
    Blob { cy: f64, cx: f64, r: f64, harmonics: Vec<(f64, f64)> },
}

impl Figure {
    fn contains(&self, y: f64, x: f64) -> bool {
        match self {
            Figure::Ellipse { cy, cx, ry, rx, angle } => {
                let (s, c) = angle.sin_cos();
                let (dy, dx) = (y - cy, x - cx);
                let (u, v) = (dx * c + dy * s, -dx * s + dy * c);
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Figure::Rectangle { cy, cx, hy, hx, angle } => {
                let (s, c) = angle.sin_cos();
                let (dy, dx) = (y - cy, x - cx);
                let (u, v) = (dx * c + dy * s, -dx * s + dy * c);
                u.abs() <= *hx && v.abs() <= *hy
            }
            Figure::Triangle { pts } => {
                let cross = |a: (f64, f64), b: (f64, f64)| (b.1 - a.1) * (y - a.0) - (b.0 - a.0) * (x - a.1);
                let d = [cross(pts[0], pts[1]), cross(pts[1], pts[2]), cross(pts[2], pts[0])];
                d.iter().all(|&v| v >= 0.0) || d.iter().all(|&v| v <= 0.0)
            }
            Figure::Blob { cy, cx, r, harmonics } => {
                let (dy, dx) = (y - cy, x - cx);
                let theta = dy.atan2(dx);
                let scale: f64 = 1.0 + harmonics.iter().enumerate().map(|(k, (a, ph))| a * ((k as f64 + 2.0) * theta + ph).sin()).sum::<f64>();
                (dy * dy + dx * dx).sqrt() <= r * scale
            }
        }
    }
}

fn draw_figure(rng: &mut ChaCha8Rng, kind: ShapeKind, h: f64, w: f64, border: bool) -> Figure {
    let side = h.min(w);
    let size = rng.random_range(0.12..0.3) * side;
    let (cy, cx) = if border {
        // Centre close enough to an edge that the figure crosses it.
        let along = rng.random_range(0.2..0.8);
        let inset = rng.random_range(0.0..0.5) * size;
        match rng.random_range(0..4) {
            0 => (inset, along * w),
            1 => (h - inset, along * w),
            2 => (along * h, inset),
            _ => (along * h, w - inset),
        }
    } else {
        (rng.random_range(0.25..0.75) * h, rng.random_range(0.25..0.75) * w)
    };
    let angle = rng.random_range(0.0..PI);
    match kind {
        ShapeKind::Ellipse => Figure::Ellipse { cy, cx, ry: size * rng.random_range(0.6..1.0), rx: size * rng.random_range(0.6..1.0), angle },
        ShapeKind::Rectangle => Figure::Rectangle { cy, cx, hy: size * rng.random_range(0.5..0.9), hx: size * rng.random_range(0.5..0.9), angle },
        ShapeKind::Triangle => {
            let a0 = rng.random_range(0.0..2.0 * PI);
            let pts = [0.0, 2.1, 4.2].map(|o: f64| {
                let a = a0 + o + rng.random_range(-0.3..0.3);
                let r = size * rng.random_range(0.9..1.3);
                (cy + r * a.sin(), cx + r * a.cos())
            });
            Figure::Triangle { pts }
        }
        ShapeKind::Blob => {
            let harmonics = (0..3).map(|_| (rng.random_range(0.0..0.18), rng.random_range(0.0..2.0 * PI))).collect();
            Figure::Blob { cy, cx, r: size, harmonics }
        }
    }
}

/// Smooth random texture: sum of a few oriented sinusoids.
struct Texture {
    waves: Vec<(f64, f64, f64, f64)>,
}

impl Texture {
    fn new(rng: &mut ChaCha8Rng, n: usize, amp: f64) -> Self {
        let waves = (0..n)
            .map(|_| {
                let a = rng.random_range(0.0..PI);
                let f = rng.random_range(0.05..0.35);
                (f * a.cos(), f * a.sin(), rng.random_range(0.0..2.0 * PI), amp * rng.random_range(0.3..1.0))
            })
            .collect();
        Texture { waves }
    }

    fn at(&self, y: f64, x: f64) -> f64 {
        self.waves.iter().map(|(fy, fx, ph, a)| a * (fy * y + fx * x + ph).sin()).sum()
    }
}

fn rng_for(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Render image `index` (absolute, including `first_index`) of the corpus.
pub fn synth_sample(spec: &SynthSpec, index: usize) -> Result<Sample> {
    if spec.kinds.is_empty() || spec.shapes.0 == 0 || spec.shapes.0 > spec.shapes.1 {
        return Err(SodError::Config("synthetic spec needs at least one shape kind and a valid shape range".into()));
    }
    let (h, w) = (spec.height, spec.width);
    let mut rng = rng_for(spec.seed, index);
    // Fixed proportions: the slot within every run of 100 images decides the case.
    let slot = (index % 100) as f64 / 100.0;
    let multi = slot < spec.multi_fraction;
    let border = !multi && slot < spec.multi_fraction + spec.border_fraction;
    let count = if multi { rng.random_range(spec.shapes.0.max(2)..=spec.shapes.1.max(2)) } else { 1 };

    for _attempt in 0..16 {
        let figures: Vec<Figure> = (0..count)
            .map(|k| {
                let kind = spec.kinds[rng.random_range(0..spec.kinds.len())];
                draw_figure(&mut rng, kind, h as f64, w as f64, border && k == 0)
            })
            .collect();
        let gt = Grid::from_fn(h, w, |y, x| figures.iter().any(|f| f.contains(y as f64 + 0.5, x as f64 + 0.5)));
        let gt = GroundTruth::new(gt);
        if gt.is_empty_mask() {
            continue;
        }
        let bg_base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.85));
        let contrast = rng.random_range(spec.contrast.0..spec.contrast.1);
        let bg_lum = bg_base.iter().sum::<f64>() / 3.0;
        let dir = if bg_lum + contrast <= 0.95 && (bg_lum - contrast < 0.05 || rng.random_bool(0.5)) { 1.0 } else { -1.0 };
        let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.1..0.1));
        let fg_base: [f64; 3] = std::array::from_fn(|c| bg_base[c] + dir * contrast + tint[c]);
        let bg_tex = Texture::new(&mut rng, 4, 0.08);
        let fg_tex = Texture::new(&mut rng, 2, 0.04);
        let mut data = vec![0f32; 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                let fg = gt.get(y, x);
                let t = if fg { fg_tex.at(y as f64, x as f64) } else { bg_tex.at(y as f64, x as f64) };
                for c in 0..3 {
                    let base = if fg { fg_base[c] } else { bg_base[c] };
                    let n: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * spec.noise;
                    data[(c * h + y) * w + x] = (base + t + n).clamp(0.0, 1.0) as f32;
                }
            }
        }
        let image = RgbImage::new(h, w, data)?;
        return Sample::new(format!("{index:05}"), image, gt);
    }
    Err(SodError::Config(format!("could not place a visible object in synthetic image {index}")))
}

/// Render the whole corpus in memory (parallel, order-preserving).
pub fn synth_dataset(spec: &SynthSpec) -> Result<Dataset> {
    let samples = (0..spec.n_images).into_par_iter().map(|i| synth_sample(spec, spec.first_index + i)).collect::<Result<_>>()?;
    Ok(Dataset { samples })
}

/// Write the corpus as `<root>/images/*.png`, `<root>/masks/*.png` and `<root>/spec.json`.
pub fn generate_synthetic(spec: &SynthSpec, root: &Path) -> Result<Dataset> {
    let ds = synth_dataset(spec)?;
    write_dataset(&ds, root)?;
    let manifest = serde_json::to_string_pretty(spec)?;
    std::fs::write(root.join("spec.json"), manifest).map_err(|e| SodError::io(root.join("spec.json"), e))?;
    Ok(ds)
}

pub fn write_dataset(ds: &Dataset, root: &Path) -> Result<()> {
    let (images, masks) = (root.join("images"), root.join("masks"));
    for d in [&images, &masks] {
        std::fs::create_dir_all(d).map_err(|e| SodError::io(d, e))?;
    }
    ds.samples.par_iter().try_for_each(|s| {
        write_rgb(&images.join(format!("{}.png", s.id)), &s.image)?;
        write_mask(&masks.join(format!("{}.png", s.id)), &s.gt)
    })
}

/// Outcome of [`load_folder`].
#[derive(Debug)]
pub struct FolderLoad {
    pub dataset: Dataset,
    /// Stems present in only one of the two directories.
    pub unmatched: Vec<String>,
    /// Pairs that failed to decode.
    pub skipped: Vec<(String, String)>,
}

/// Load image/mask pairs by stem, resizing to `base` (`None` keeps native size).
///
/// Masks are binarized at 128 on load, then resized nearest-neighbour; images bilinearly.
pub fn load_folder(image_dir: &Path, mask_dir: &Path, base: Option<(usize, usize)>) -> Result<FolderLoad> {
    let images = list_images(image_dir)?;
    let masks = list_images(mask_dir)?;
    let mut unmatched = Vec::new();
    let mut pairs: Vec<(String, PathBuf, PathBuf)> = Vec::new();
    for (stem, ip) in &images {
        match masks.iter().find(|(s, _)| s == stem) {
            Some((_, mp)) => pairs.push((stem.clone(), ip.clone(), mp.clone())),
            None => unmatched.push(stem.clone()),
        }
    }
    unmatched.extend(masks.iter().filter(|(s, _)| !images.iter().any(|(t, _)| t == s)).map(|(s, _)| s.clone()));
    let loaded: Vec<std::result::Result<Sample, (String, String)>> = pairs
        .par_iter()
        .map(|(stem, ip, mp)| {
            let load = || -> Result<Sample> {
                let mut image = read_rgb(ip)?;
                let mut gt = read_mask(mp)?;
                let (h, w) = base.unwrap_or(gt.dims());
                if image.dims() != (h, w) {
                    image = image.resize(h, w);
                }
                if gt.dims() != (h, w) {
                    gt = GroundTruth::new(resize_nearest(gt.grid(), h, w));
                }
                Sample::new(stem.clone(), image, gt)
            };
            load().map_err(|e| (stem.clone(), e.to_string()))
        })
        .collect();
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for r in loaded {
        match r {
            Ok(s) => samples.push(s),
            Err(e) => skipped.push(e),
        }
    }
    if samples.is_empty() {
        return Err(SodError::Empty("no samples".into()));
    }
    Ok(FolderLoad { dataset: Dataset { samples }, unmatched, skipped })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub flip_p: f64,
    /// Minimum retained area fraction of the random crop.
    pub min_crop_area: f64,
    pub scales: Vec<f64>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { flip_p: 0.5, min_crop_area: 0.8, scales: vec![0.75, 1.0, 1.25] }
    }
}

/// One sample's geometric draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentDraw {
    pub flip: bool,
    pub crop: (usize, usize, usize, usize),
}

impl AugmentDraw {
    pub fn identity(h: usize, w: usize) -> Self {
        AugmentDraw { flip: false, crop: (0, 0, h, w) }
    }

    pub fn sample(rng: &mut impl Rng, h: usize, w: usize, cfg: &AugmentConfig) -> Self {
        let flip = rng.random_bool(cfg.flip_p.clamp(0.0, 1.0));
        let area = rng.random_range(cfg.min_crop_area.min(1.0)..=1.0);
        let ch = ((h as f64 * area.sqrt()).round() as usize).clamp(1, h);
        let cw = ((w as f64 * area.sqrt()).round() as usize).clamp(1, w);
        let y0 = rng.random_range(0..=h - ch);
        let x0 = rng.random_range(0..=w - cw);
        AugmentDraw { flip, crop: (y0, x0, ch, cw) }
    }
}

/// Batch-level input size: `base * scale`, rounded to a multiple of 32 (at least 64).
pub fn jitter_size(base: usize, scale: f64) -> usize {
    (((base as f64 * scale) / 32.0).round() as usize * 32).max(64)
}

/// Apply flip and crop, resize to `target` and recompute the detail label.
pub fn augment(sample: &Sample, draw: &AugmentDraw, target: (usize, usize)) -> Result<Sample> {
    let (y0, x0, ch, cw) = draw.crop;
    let (h, w) = sample.gt.dims();
    if y0 + ch > h || x0 + cw > w {
        return Err(SodError::Config(format!("crop {:?} outside {h}x{w}", draw.crop)));
    }
    let mut image = sample.image.clone();
    let mut gt = sample.gt.grid().clone();
    if draw.flip {
        image = image.flip_horizontal();
        gt = gt.flip_horizontal();
    }
    if (ch, cw) != (h, w) {
        image = image.crop(y0, x0, ch, cw);
        gt = gt.crop(y0, x0, ch, cw);
    }
    let image = image.resize(target.0, target.1);
    let gt = GroundTruth::new(resize_nearest(&gt, target.0, target.1));
    Sample::new(sample.id.clone(), image, gt)
}

/// Stack samples into an `N x 3 x H x W` tensor (all samples must share a size).
pub fn stack_images(samples: &[&Sample]) -> Result<Tensor<f32>> {
    let (h, w) = samples.first().ok_or_else(|| SodError::Empty("empty batch".into()))?.image.dims();
    let mut data = Vec::with_capacity(samples.len() * 3 * h * w);
    for s in samples {
        if s.image.dims() != (h, w) {
            return Err(SodError::ShapeMismatch { op: "stack_images", a: (h, w), b: s.image.dims() });
        }
        data.extend_from_slice(&s.image.data);
    }
    Ok(Tensor::from_vec(Shape([samples.len(), 3, h, w]), data)?)
}

//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sodnet::{GrayMask, Grid, GroundTruth};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random binary mask: a few rectangles and discs plus salt noise.
pub fn random_mask(rng: &mut impl Rng, h: usize, w: usize) -> GroundTruth {
    let mut g = Grid::filled(h, w, false);
    for _ in 0..rng.random_range(0..4) {
        let (cy, cx) = (rng.random_range(0..h) as f64, rng.random_range(0..w) as f64);
        let r = rng.random_range(1.0..(h.max(w) as f64 / 2.0).max(1.5));
        let disc = rng.random_bool(0.5);
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let inside = if disc { dy * dy + dx * dx <= r * r } else { dy.abs() <= r && dx.abs() <= r * 0.7 };
                if inside {
                    g.set(y, x, true);
                }
            }
        }
    }
    let p = rng.random_range(0.0..0.05);
    for v in g.data_mut() {
        if rng.random_bool(p) {
            *v = !*v;
        }
    }
    GroundTruth::new(g)
}

pub fn random_map(rng: &mut impl Rng, h: usize, w: usize, lo: f64, hi: f64) -> GrayMask {
    Grid::from_fn(h, w, |_, _| rng.random_range(lo..hi))
}

/// Euclidean distance to the nearest set pixel by scanning every set pixel.
pub fn brute_distance(sites: &GroundTruth) -> Option<Vec<f64>> {
    let (h, w) = sites.dims();
    let pts: Vec<(usize, usize)> = (0..h).flat_map(|y| (0..w).map(move |x| (y, x))).filter(|&(y, x)| sites.get(y, x)).collect();
    if pts.is_empty() {
        return None;
    }
    Some(
        (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as f64, (i % w) as f64);
                pts.iter().map(|&(py, px)| ((py as f64 - y).powi(2) + (px as f64 - x).powi(2)).sqrt()).fold(f64::INFINITY, f64::min)
            })
            .collect(),
    )
}

/// Precision and recall at threshold `tau` by direct counting.
pub fn naive_pr(pred: &GrayMask, gt: &GroundTruth, tau: usize) -> (f64, f64) {
    let mut tp = 0usize;
    let mut pp = 0usize;
    for (&p, &g) in pred.data().iter().zip(gt.grid().data()) {
        if p > tau as f64 / 255.0 {
            pp += 1;
            if g {
                tp += 1;
            }
        }
    }
    let positives = gt.count();
    let precision = if pp == 0 { if positives == 0 { 1.0 } else { 0.0 } } else { tp as f64 / pp as f64 };
    let recall = if positives == 0 { 1.0 } else { tp as f64 / positives as f64 };
    (precision, recall)
}

/// Weighted F-beta written from the definition with brute-force nearest
/// foreground search and an explicitly padded error image.
pub fn weighted_f_reference(pred: &GrayMask, gt: &GroundTruth) -> f64 {
    let (h, w) = gt.dims();
    let fg: Vec<(usize, usize)> = (0..w).flat_map(|x| (0..h).map(move |y| (y, x))).filter(|&(y, x)| gt.get(y, x)).collect();
    if fg.is_empty() {
        return if pred.data().iter().all(|&v| v == 0.0) { 1.0 } else { 0.0 };
    }
    let g = |y: usize, x: usize| if gt.get(y, x) { 1.0 } else { 0.0 };
    let e = |y: usize, x: usize| (pred.get(y, x) - g(y, x)).abs();
    // Nearest foreground pixel; scanning column-major keeps the first hit on
    // ties, i.e. the smallest column and then the smallest row.
    let nearest = |y: usize, x: usize| {
        let mut best = (f64::INFINITY, (0, 0));
        for &(py, px) in &fg {
            let d = ((py as f64 - y as f64).powi(2) + (px as f64 - x as f64).powi(2)).sqrt();
            if d < best.0 {
                best = (d, (py, px));
            }
        }
        best
    };
    let mut et = vec![vec![0.0; w + 6]; h + 6];
    for (yy, row) in et.iter_mut().enumerate() {
        for (xx, v) in row.iter_mut().enumerate() {
            let y = (yy as isize - 3).clamp(0, h as isize - 1) as usize;
            let x = (xx as isize - 3).clamp(0, w as isize - 1) as usize;
            let (py, px) = if gt.get(y, x) { (y, x) } else { nearest(y, x).1 };
            *v = e(py, px);
        }
    }
    let sigma: f64 = 5.0;
    let mut kernel = [[0.0; 7]; 7];
    let mut ks = 0.0;
    for (i, row) in kernel.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (-((i as f64 - 3.0).powi(2) + (j as f64 - 3.0).powi(2)) / (2.0 * sigma * sigma)).exp();
            ks += *v;
        }
    }
    let (mut fg_err, mut bg_err) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if gt.get(y, x) {
                let mut ea = 0.0;
                for (i, row) in kernel.iter().enumerate() {
                    for (j, k) in row.iter().enumerate() {
                        ea += k / ks * et[y + i][x + j];
                    }
                }
                fg_err += ea.min(e(y, x));
            } else {
                let d = nearest(y, x).0;
                let b = 2.0 - (0.5f64.ln() / 5.0 * d).exp();
                bg_err += b * e(y, x);
            }
        }
    }
    let n = fg.len() as f64;
    let tp = n - fg_err;
    let r = 1.0 - fg_err / n;
    let p = tp / (f64::EPSILON + tp + bg_err);
    1.3 * r * p / (f64::EPSILON + r + 0.3 * p)
}

/// Central difference of `f` at `x[i]`.
pub fn central_diff(x: &mut [f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let up = f(x);
    x[i] = orig - h;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * h)
}

/// Relative error with an absolute floor for gradients near zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

//! Detail-label decomposition.
//!
//! A binary mask is split into a *detail* label that peaks on object edges and
//! decays toward each object's interior, and the complementary *body* label.
//! Distances come from an exact separable Euclidean distance transform
//! (lower envelope of parabolas) computed in integer arithmetic.

use crate::error::{Result, SodError};
use crate::grid::{DetailLabel, DistanceField, GrayMask, Grid, GroundTruth};

/// Foreground pixels with at least one 4-neighbour that is background or off-image.
pub fn extract_edge(mask: &GroundTruth) -> GroundTruth {
    let (h, w) = mask.dims();
    GroundTruth::new(Grid::from_fn(h, w, |y, x| {
        if !mask.get(y, x) {
            return false;
        }
        y == 0 || x == 0 || y + 1 == h || x + 1 == w || !mask.get(y - 1, x) || !mask.get(y + 1, x) || !mask.get(y, x - 1) || !mask.get(y, x + 1)
    }))
}

/// Exact nearest-site map: squared distance and flat index of the nearest site.
///
/// Ties are broken toward the smallest column, then the smallest row.
#[derive(Clone, Debug, PartialEq)]
pub struct NearestSites {
    pub height: usize,
    pub width: usize,
    pub sq_dist: Vec<i64>,
    pub site: Vec<usize>,
}

impl NearestSites {
    pub fn distance(&self, y: usize, x: usize) -> f64 {
        (self.sq_dist[y * self.width + x] as f64).sqrt()
    }
}

const NONE: i64 = i64::MAX;

/// Exact Euclidean feature transform of the set pixels of `sites`.
///
/// Returns `None` when no pixel is set. Runs one column pass and one row pass,
/// each linear in the number of pixels.
pub fn nearest_sites(sites: &Grid<bool>) -> Option<NearestSites> {
    let (h, w) = sites.dims();
    if !sites.data().iter().any(|&v| v) {
        return None;
    }
    // Column pass: nearest site row within each column (upper row wins ties).
    let mut col_dist = vec![NONE; h * w];
    let mut col_row = vec![0usize; h * w];
    for x in 0..w {
        let mut last: Option<usize> = None;
        for y in 0..h {
            if sites.get(y, x) {
                last = Some(y);
            }
            if let Some(r) = last {
                col_dist[y * w + x] = (y - r) as i64;
                col_row[y * w + x] = r;
            }
        }
        let mut next: Option<usize> = None;
        for y in (0..h).rev() {
            if sites.get(y, x) {
                next = Some(y);
            }
            if let Some(r) = next {
                let d = (r - y) as i64;
                if d < col_dist[y * w + x] {
                    col_dist[y * w + x] = d;
                    col_row[y * w + x] = r;
                }
            }
        }
    }
    // Row pass: lower envelope of parabolas (x - q)^2 + g(q)^2.
    let mut sq_dist = vec![0i64; h * w];
    let mut site = vec![0usize; h * w];
    let mut hull: Vec<usize> = Vec::with_capacity(w);
    // Left boundary of each hull parabola as a rational num/den (den > 0).
    let mut bounds: Vec<(i64, i64)> = Vec::with_capacity(w + 1);
    for y in 0..h {
        let g = |q: usize| col_dist[y * w + q];
        hull.clear();
        bounds.clear();
        for q in 0..w {
            if g(q) == NONE {
                continue;
            }
            let fq = g(q) * g(q) + (q * q) as i64;
            loop {
                let Some(&v) = hull.last() else {
                    hull.push(q);
                    bounds.push((i64::MIN / 4, 1));
                    break;
                };
                let fv = g(v) * g(v) + (v * v) as i64;
                let s = (fq - fv, 2 * (q - v) as i64);
                let top = *bounds.last().expect("bounds track hull");
                if hull.len() > 1 && le(s, top) {
                    hull.pop();
                    bounds.pop();
                    continue;
                }
                hull.push(q);
                bounds.push(s);
                break;
            }
        }
        let mut k = 0;
        for x in 0..w {
            while k + 1 < hull.len() && lt(bounds[k + 1], x as i64) {
                k += 1;
            }
            let q = hull[k];
            let dx = x as i64 - q as i64;
            let gq = g(q);
            sq_dist[y * w + x] = dx * dx + gq * gq;
            site[y * w + x] = col_row[y * w + q] * w + q;
        }
    }
    Some(NearestSites { height: h, width: w, sq_dist, site })
}

/// `a <= b` for rationals with positive denominators.
fn le(a: (i64, i64), b: (i64, i64)) -> bool {
    (a.0 as i128) * (b.1 as i128) <= (b.0 as i128) * (a.1 as i128)
}

/// `a < x` for a rational `a` and integer `x`.
fn lt(a: (i64, i64), x: i64) -> bool {
    (a.0 as i128) < (x as i128) * (a.1 as i128)
}

/// Distance from every pixel to the nearest set pixel of `edge`.
pub fn euclidean_distance_transform(edge: &GroundTruth) -> Result<DistanceField> {
    let ns = nearest_sites(edge.grid()).ok_or(SodError::NoSalientRegion)?;
    let (h, w) = edge.dims();
    Ok(DistanceField(Grid::from_fn(h, w, |y, x| ns.distance(y, x))))
}

/// 4-connected component labels; background is 0, components are numbered from 1.
pub fn connected_components(mask: &GroundTruth) -> (Grid<u32>, u32) {
    let (h, w) = mask.dims();
    let mut labels = Grid::filled(h, w, 0u32);
    let mut count = 0;
    let mut stack = Vec::new();
    for y0 in 0..h {
        for x0 in 0..w {
            if !mask.get(y0, x0) || labels.get(y0, x0) != 0 {
                continue;
            }
            count += 1;
            labels.set(y0, x0, count);
            stack.push((y0, x0));
            while let Some((y, x)) = stack.pop() {
                let mut visit = |ny: usize, nx: usize, labels: &mut Grid<u32>| {
                    if mask.get(ny, nx) && labels.get(ny, nx) == 0 {
                        labels.set(ny, nx, count);
                        stack.push((ny, nx));
                    }
                };
                if y > 0 {
                    visit(y - 1, x, &mut labels);
                }
                if y + 1 < h {
                    visit(y + 1, x, &mut labels);
                }
                if x > 0 {
                    visit(y, x - 1, &mut labels);
                }
                if x + 1 < w {
                    visit(y, x + 1, &mut labels);
                }
            }
        }
    }
    (labels, count)
}

/// Detail label: `1 - d/d_max` on foreground, normalized per connected component.
///
/// `d` is the distance to the nearest edge pixel of the same component and
/// `d_max` its maximum over the component. Components with `d_max = 0` are
/// entirely edge and get 1 everywhere.
pub fn decompose_detail(mask: &GroundTruth) -> DetailLabel {
    let (h, w) = mask.dims();
    let mut out = GrayMask::zeros(h, w);
    let edge = extract_edge(mask);
    let (labels, count) = connected_components(mask);
    if count == 0 {
        return DetailLabel(out);
    }
    // Bounding boxes: (y0, x0, y1, x1) inclusive.
    let mut boxes = vec![(usize::MAX, usize::MAX, 0usize, 0usize); count as usize + 1];
    for y in 0..h {
        for x in 0..w {
            let l = labels.get(y, x) as usize;
            if l > 0 {
                let b = &mut boxes[l];
                *b = (b.0.min(y), b.1.min(x), b.2.max(y), b.3.max(x));
            }
        }
    }
    for (l, &(y0, x0, y1, x1)) in boxes.iter().enumerate().skip(1) {
        let (bh, bw) = (y1 - y0 + 1, x1 - x0 + 1);
        let sites = Grid::from_fn(bh, bw, |y, x| labels.get(y0 + y, x0 + x) as usize == l && edge.get(y0 + y, x0 + x));
        let ns = nearest_sites(&sites).expect("every component has an edge pixel");
        let mut d_max_sq = 0i64;
        for y in 0..bh {
            for x in 0..bw {
                if labels.get(y0 + y, x0 + x) as usize == l {
                    d_max_sq = d_max_sq.max(ns.sq_dist[y * bw + x]);
                }
            }
        }
        let d_max = (d_max_sq as f64).sqrt();
        for y in 0..bh {
            for x in 0..bw {
                if labels.get(y0 + y, x0 + x) as usize != l {
                    continue;
                }
                let v = if d_max_sq == 0 { 1.0 } else { 1.0 - ns.distance(y, x) / d_max };
                out.set(y0 + y, x0 + x, v.clamp(0.0, 1.0));
            }
        }
    }
    DetailLabel(out)
}

/// Body label `G - G_detail`, clamped to `[0, 1]`.
pub fn decompose_body(mask: &GroundTruth, detail: &DetailLabel) -> Result<GrayMask> {
    mask.grid().ensure_same_dims(detail.map(), "decompose_body")?;
    let (h, w) = mask.dims();
    Ok(Grid::from_fn(h, w, |y, x| {
        let g = if mask.get(y, x) { 1.0 } else { 0.0 };
        (g - detail.map().get(y, x)).clamp(0.0, 1.0)
    }))
}

//! Evaluation: MAE, the 256-threshold precision/recall sweep, mean F-beta and
//! weighted F-beta.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SodError};
use crate::grid::{GrayMask, GroundTruth};
use crate::imageio::{list_images, read_gray, read_mask, resize_gray};
use crate::labelgen::nearest_sites;

pub const BETA2: f64 = 0.3;
pub const THRESHOLDS: usize = 256;

pub fn mae(pred: &GrayMask, gt: &GroundTruth) -> Result<f64> {
    pred.ensure_same_dims(gt.grid(), "mae")?;
    let sum: f64 = pred.data().iter().zip(gt.grid().data()).map(|(&p, &g)| (p - if g { 1.0 } else { 0.0 }).abs()).sum();
    Ok(sum / pred.len() as f64)
}

#[inline]
fn above(v: f64, tau: usize) -> bool {
    v > tau as f64 / 255.0
}

/// Number of thresholds `tau` in `0..256` at which `v` binarizes to foreground.
///
/// Uses exactly the comparison in [`above`], so the histogram sweep agrees with a
/// per-threshold recount bit for bit.
fn positive_count(v: f64) -> usize {
    let mut k = (v * 255.0).floor().clamp(-1.0, 255.0) as isize + 1;
    // Correct for rounding in either direction.
    while k > 0 && !above(v, k as usize - 1) {
        k -= 1;
    }
    while (k as usize) < THRESHOLDS && above(v, k as usize) {
        k += 1;
    }
    k as usize
}

/// How per-image confusion counts are combined across a dataset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrAggregation {
    /// Precision and recall per image, then averaged (default).
    #[default]
    PerImage,
    /// True/false positives pooled over every pixel of the dataset.
    Pooled,
}

/// Per-image true/false positive counts at every threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct Confusion {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub positives: u64,
}

impl Confusion {
    pub fn compute(pred: &GrayMask, gt: &GroundTruth) -> Result<Self> {
        pred.ensure_same_dims(gt.grid(), "pr_sweep")?;
        let mut fg = [0u64; THRESHOLDS + 1];
        let mut bg = [0u64; THRESHOLDS + 1];
        for (&v, &g) in pred.data().iter().zip(gt.grid().data()) {
            let k = positive_count(v);
            if g {
                fg[k] += 1;
            } else {
                bg[k] += 1;
            }
        }
        // Foreground at tau iff k > tau: suffix sums over k.
        let (mut tp, mut fp) = (vec![0; THRESHOLDS], vec![0; THRESHOLDS]);
        let (mut a, mut b) = (0, 0);
        for tau in (0..THRESHOLDS).rev() {
            a += fg[tau + 1];
            b += bg[tau + 1];
            tp[tau] = a;
            fp[tau] = b;
        }
        Ok(Confusion { tp, fp, positives: gt.count() as u64 })
    }

    /// Precision and recall at one threshold.
    ///
    /// Empty prediction: precision 0, or 1 if the GT is also empty.
    /// Empty GT: recall 1.
    pub fn pr(&self, tau: usize) -> (f64, f64) {
        let (tp, fp, pos) = (self.tp[tau], self.fp[tau], self.positives);
        let p = if tp + fp == 0 {
            if pos == 0 { 1.0 } else { 0.0 }
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let r = if pos == 0 { 1.0 } else { tp as f64 / pos as f64 };
        (p, r)
    }
}

pub fn f_beta(p: f64, r: f64) -> f64 {
    let d = BETA2 * p + r;
    if d <= 0.0 { 0.0 } else { (1.0 + BETA2) * p * r / d }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrSweep {
    pub thresholds: Vec<u32>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f_beta: Vec<f64>,
}

impl PrSweep {
    pub fn from_confusions(items: &[Confusion], agg: PrAggregation) -> Result<Self> {
        if items.is_empty() {
            return Err(SodError::Empty("pr_sweep needs at least one prediction".into()));
        }
        let n = items.len() as f64;
        let mut precision = vec![0.0; THRESHOLDS];
        let mut recall = vec![0.0; THRESHOLDS];
        match agg {
            PrAggregation::PerImage => {
                for c in items {
                    for tau in 0..THRESHOLDS {
                        let (p, r) = c.pr(tau);
                        precision[tau] += p;
                        recall[tau] += r;
                    }
                }
                precision.iter_mut().chain(recall.iter_mut()).for_each(|v| *v /= n);
            }
            PrAggregation::Pooled => {
                let total = Confusion {
                    tp: (0..THRESHOLDS).map(|t| items.iter().map(|c| c.tp[t]).sum()).collect(),
                    fp: (0..THRESHOLDS).map(|t| items.iter().map(|c| c.fp[t]).sum()).collect(),
                    positives: items.iter().map(|c| c.positives).sum(),
                };
                for tau in 0..THRESHOLDS {
                    (precision[tau], recall[tau]) = total.pr(tau);
                }
            }
        }
        let f_beta = precision.iter().zip(&recall).map(|(&p, &r)| f_beta(p, r)).collect();
        Ok(PrSweep { thresholds: (0..THRESHOLDS as u32).collect(), precision, recall, f_beta })
    }

    pub fn max_f(&self) -> f64 {
        self.f_beta.iter().copied().fold(0.0, f64::max)
    }

    /// CSV with columns `threshold,precision,recall,f_beta`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,precision,recall,f_beta\n");
        for k in 0..self.thresholds.len() {
            s.push_str(&format!("{},{},{},{}\n", self.thresholds[k], self.precision[k], self.recall[k], self.f_beta[k]));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut sweep = PrSweep { thresholds: vec![], precision: vec![], recall: vec![], f_beta: vec![] };
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            let bad = || SodError::Config(format!("curve csv line {}: `{line}`", i + 1));
            if cols.len() != 4 {
                return Err(bad());
            }
            sweep.thresholds.push(cols[0].trim().parse().map_err(|_| bad())?);
            sweep.precision.push(cols[1].trim().parse().map_err(|_| bad())?);
            sweep.recall.push(cols[2].trim().parse().map_err(|_| bad())?);
            sweep.f_beta.push(cols[3].trim().parse().map_err(|_| bad())?);
        }
        if sweep.thresholds.is_empty() {
            return Err(SodError::Empty("curve csv has no rows".into()));
        }
        Ok(sweep)
    }
}

pub fn pr_sweep(preds: &[GrayMask], gts: &[GroundTruth], agg: PrAggregation) -> Result<PrSweep> {
    if preds.len() != gts.len() {
        return Err(SodError::Config(format!("{} predictions for {} ground truths", preds.len(), gts.len())));
    }
    let conf = preds.iter().zip(gts).map(|(p, g)| Confusion::compute(p, g)).collect::<Result<Vec<_>>>()?;
    PrSweep::from_confusions(&conf, agg)
}

pub fn mean_f(sweep: &PrSweep) -> f64 {
    sweep.f_beta.iter().sum::<f64>() / sweep.f_beta.len() as f64
}

/// Normalized 7x7 Gaussian, sigma 5.
fn gaussian_kernel() -> [[f64; 7]; 7] {
    let mut k = [[0.0; 7]; 7];
    let mut total = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (y, x) = (i as f64 - 3.0, j as f64 - 3.0);
            *v = (-(x * x + y * y) / 50.0).exp();
            total += *v;
        }
    }
    k.iter_mut().flatten().for_each(|v| *v /= total);
    k
}

/// Weighted F-beta (Margolin et al.) with sigma 5, nu 0.5 and beta^2 = 0.3.
/// The 7x7 Gaussian smoothing of the error map replicates edge pixels.
///
/// Empty GT gives 0, or 1 when the prediction is all zero as well.
pub fn weighted_f(pred: &GrayMask, gt: &GroundTruth) -> Result<f64> {
    pred.ensure_same_dims(gt.grid(), "weighted_f")?;
    let (h, w) = gt.dims();
    let Some(near) = nearest_sites(gt.grid()) else {
        return Ok(if pred.data().iter().all(|&v| v == 0.0) { 1.0 } else { 0.0 });
    };
    let g = gt.grid().data();
    let err: Vec<f64> = pred.data().iter().zip(g).map(|(&p, &f)| (p - if f { 1.0 } else { 0.0 }).abs()).collect();
    // Background errors borrow the error of their nearest foreground pixel.
    let et: Vec<f64> = (0..h * w).map(|i| if g[i] { err[i] } else { err[near.site[i]] }).collect();
    let k = gaussian_kernel();
    let mut ew = vec![0.0; h * w];
    let mut sum_fg = 0.0;
    let mut sum_bg = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if g[i] {
                let mut ea = 0.0;
                // Border pixels are replicated outward.
                for (dy, row) in k.iter().enumerate() {
                    let yy = (y + dy).saturating_sub(3).min(h - 1);
                    for (dx, kv) in row.iter().enumerate() {
                        let xx = (x + dx).saturating_sub(3).min(w - 1);
                        ea += kv * et[yy * w + xx];
                    }
                }
                ew[i] = if ea < err[i] { ea } else { err[i] };
                sum_fg += ew[i];
            } else {
                let b = 2.0 - (0.5f64.ln() / 5.0 * near.distance(y, x)).exp();
                ew[i] = err[i] * b;
                sum_bg += ew[i];
            }
        }
    }
    let n_fg = gt.count() as f64;
    let tpw = n_fg - sum_fg;
    let r = 1.0 - sum_fg / n_fg;
    let p = tpw / (f64::EPSILON + tpw + sum_bg);
    Ok((1.0 + BETA2) * r * p / (f64::EPSILON + r + BETA2 * p))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: f64,
    pub mean_f: f64,
    pub max_f: f64,
    pub weighted_f: f64,
    pub n_images: usize,
    pub sweep: PrSweep,
}

struct ImageStats {
    mae: f64,
    wf: f64,
    conf: Confusion,
}

/// Evaluate paired maps in parallel; aggregation is in input order, so the
/// report does not depend on scheduling.
pub fn evaluate(preds: &[GrayMask], gts: &[GroundTruth], agg: PrAggregation) -> Result<MetricReport> {
    if preds.len() != gts.len() {
        return Err(SodError::Config(format!("{} predictions for {} ground truths", preds.len(), gts.len())));
    }
    if preds.is_empty() {
        return Err(SodError::Empty("nothing to evaluate".into()));
    }
    let stats: Vec<ImageStats> = preds
        .par_iter()
        .zip(gts.par_iter())
        .map(|(p, g)| Ok(ImageStats { mae: mae(p, g)?, wf: weighted_f(p, g)?, conf: Confusion::compute(p, g)? }))
        .collect::<Result<_>>()?;
    let n = stats.len() as f64;
    let confs: Vec<Confusion> = stats.iter().map(|s| s.conf.clone()).collect();
    let sweep = PrSweep::from_confusions(&confs, agg)?;
    Ok(MetricReport {
        mae: stats.iter().map(|s| s.mae).sum::<f64>() / n,
        mean_f: mean_f(&sweep),
        max_f: sweep.max_f(),
        weighted_f: stats.iter().map(|s| s.wf).sum::<f64>() / n,
        n_images: stats.len(),
        sweep,
    })
}

/// Result of [`evaluate_dirs`]: the report over matched pairs plus any stems
/// that had no partner.
#[derive(Clone, Debug)]
pub struct DirEvaluation {
    pub report: MetricReport,
    pub missing: Vec<String>,
}

/// Pair files by stem, rescale predictions to GT size and evaluate.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path, agg: PrAggregation) -> Result<DirEvaluation> {
    let preds = list_images(pred_dir)?;
    let gts = list_images(gt_dir)?;
    let mut missing = Vec::new();
    let mut pairs = Vec::new();
    for (stem, gp) in &gts {
        match preds.iter().find(|(s, _)| s == stem) {
            Some((_, pp)) => pairs.push((pp.clone(), gp.clone())),
            None => missing.push(stem.clone()),
        }
    }
    for (stem, _) in &preds {
        if !gts.iter().any(|(s, _)| s == stem) {
            missing.push(stem.clone());
        }
    }
    let loaded: Vec<(GrayMask, GroundTruth)> = pairs
        .par_iter()
        .map(|(pp, gp)| {
            let gt = read_mask(gp)?;
            let pred = read_gray(pp)?;
            Ok((resize_gray(&pred, gt.height(), gt.width()), gt))
        })
        .collect::<Result<_>>()?;
    let (p, g): (Vec<_>, Vec<_>) = loaded.into_iter().unzip();
    Ok(DirEvaluation { report: evaluate(&p, &g, agg)?, missing })
}

/// Per-image MAE helper used by training validation.
pub fn mean_mae(preds: &[GrayMask], gts: &[GroundTruth]) -> Result<f64> {
    let mut s = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        s += mae(p, g)?;
    }
    Ok(s / preds.len().max(1) as f64)
}

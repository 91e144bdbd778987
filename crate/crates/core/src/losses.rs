//! Hybrid loss suite: cross-entropy, windowed SSIM, soft IoU and F-loss, each
//! with an analytic gradient with respect to the prediction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SodError};
use crate::grid::{DetailLabel, GrayMask, GroundTruth};
use crate::labelgen::decompose_body;
use crate::preset::{Cascade, LossFlags};

pub const EPS: f64 = 1e-6;
pub const BETA2: f64 = 0.3;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const SSIM_WINDOW: usize = 11;

/// Loss value together with its gradient with respect to the prediction.
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub value: f64,
    pub grad: GrayMask,
}

fn check(pred: &GrayMask, target: &GrayMask, op: &'static str) -> Result<()> {
    pred.ensure_same_dims(target, op)
}

/// Mean binary cross-entropy with soft targets; predictions are clipped to `[EPS, 1 - EPS]`.
///
/// The gradient is evaluated at the clipped prediction.
pub fn ce_loss_grad(pred: &GrayMask, target: &GrayMask) -> Result<LossGrad> {
    check(pred, target, "ce_loss")?;
    let n = pred.len() as f64;
    let mut grad = GrayMask::zeros(pred.height(), pred.width());
    let mut total = 0.0;
    for ((&p, &t), g) in pred.data().iter().zip(target.data()).zip(grad.data_mut()) {
        let p = p.clamp(EPS, 1.0 - EPS);
        total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        *g = (p - t) / (p * (1.0 - p)) / n;
    }
    Ok(LossGrad { value: total / n, grad })
}

pub fn ce_loss(pred: &GrayMask, target: &GrayMask) -> Result<f64> {
    ce_loss_grad(pred, target).map(|l| l.value)
}

/// Summed-area table with a zero top row and left column.
fn integral(h: usize, w: usize, f: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut s = vec![0.0; (h + 1) * (w + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += f(y * w + x);
            s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
        }
    }
    s
}

fn box_sum(s: &[f64], w: usize, y0: usize, x0: usize, y1: usize, x1: usize) -> f64 {
    let st = w + 1;
    s[y1 * st + x1] - s[y0 * st + x1] - s[y1 * st + x0] + s[y0 * st + x0]
}

/// `1 - mean SSIM` over all `window x window` sliding windows (uniform weights).
///
/// Falls back to one global window when the map is smaller than the window.
pub fn ssim_loss_grad(pred: &GrayMask, target: &GrayMask, window: usize) -> Result<LossGrad> {
    check(pred, target, "ssim_loss")?;
    let (h, w) = pred.dims();
    let (wh, ww) = if h < window || w < window { (h, w) } else { (window, window) };
    let (nh, nw) = (h - wh + 1, w - ww + 1);
    let n = (wh * ww) as f64;
    let (x, y) = (pred.data(), target.data());
    let sx = integral(h, w, |i| x[i]);
    let sy = integral(h, w, |i| y[i]);
    let sxx = integral(h, w, |i| x[i] * x[i]);
    let syy = integral(h, w, |i| y[i] * y[i]);
    let sxy = integral(h, w, |i| x[i] * y[i]);
    // Per-window partials of SSIM w.r.t. the raw moments of x.
    let mut coef_m = vec![0.0; nh * nw];
    let mut coef_q = vec![0.0; nh * nw];
    let mut coef_c = vec![0.0; nh * nw];
    let mut total = 0.0;
    for wy in 0..nh {
        for wx in 0..nw {
            let bs = |s: &[f64]| box_sum(s, w, wy, wx, wy + wh, wx + ww) / n;
            let (mx, my) = (bs(&sx), bs(&sy));
            let vx = bs(&sxx) - mx * mx;
            let vy = bs(&syy) - my * my;
            let cxy = bs(&sxy) - mx * my;
            let a1 = 2.0 * mx * my + SSIM_C1;
            let a2 = 2.0 * cxy + SSIM_C2;
            let b1 = mx * mx + my * my + SSIM_C1;
            let b2 = vx + vy + SSIM_C2;
            let s = (a1 * a2) / (b1 * b2);
            total += s;
            let d_mu = 2.0 * my * a2 / (b1 * b2) - s * 2.0 * mx / b1;
            let d_var = -s / b2;
            let d_cov = 2.0 * a1 / (b1 * b2);
            let k = wy * nw + wx;
            coef_m[k] = d_mu - 2.0 * mx * d_var - my * d_cov;
            coef_q[k] = d_var;
            coef_c[k] = d_cov;
        }
    }
    let windows = (nh * nw) as f64;
    // Adjoint of the window sum: every pixel collects the coefficients of the windows covering it.
    let im = integral(nh, nw, |i| coef_m[i]);
    let iq = integral(nh, nw, |i| coef_q[i]);
    let ic = integral(nh, nw, |i| coef_c[i]);
    let mut grad = GrayMask::zeros(h, w);
    let scale = -1.0 / (n * windows);
    for py in 0..h {
        let y0 = py.saturating_sub(wh - 1);
        let y1 = py.min(nh - 1) + 1;
        for px in 0..w {
            let x0 = px.saturating_sub(ww - 1);
            let x1 = px.min(nw - 1) + 1;
            let i = py * w + px;
            let am = box_sum(&im, nw, y0, x0, y1, x1);
            let aq = box_sum(&iq, nw, y0, x0, y1, x1);
            let ac = box_sum(&ic, nw, y0, x0, y1, x1);
            grad.data_mut()[i] = scale * (am + 2.0 * x[i] * aq + y[i] * ac);
        }
    }
    Ok(LossGrad { value: 1.0 - total / windows, grad })
}

pub fn ssim_loss(pred: &GrayMask, target: &GrayMask) -> Result<f64> {
    ssim_loss_grad(pred, target, SSIM_WINDOW).map(|l| l.value)
}

/// Soft IoU loss `1 - sum(SG) / sum(S + G - SG)`; two empty maps give 0.
pub fn iou_loss_grad(pred: &GrayMask, target: &GrayMask) -> Result<LossGrad> {
    check(pred, target, "iou_loss")?;
    let (mut inter, mut union) = (0.0, 0.0);
    for (&s, &g) in pred.data().iter().zip(target.data()) {
        inter += s * g;
        union += s + g - s * g;
    }
    let mut grad = GrayMask::zeros(pred.height(), pred.width());
    if union <= 0.0 {
        return Ok(LossGrad { value: 0.0, grad });
    }
    for (&g, d) in target.data().iter().zip(grad.data_mut()) {
        *d = -(g * union - inter * (1.0 - g)) / (union * union);
    }
    Ok(LossGrad { value: 1.0 - inter / union, grad })
}

pub fn iou_loss(pred: &GrayMask, target: &GrayMask) -> Result<f64> {
    iou_loss_grad(pred, target).map(|l| l.value)
}

/// `1 - F_beta` computed on soft precision and recall, `beta^2 = 0.3`.
pub fn f_loss_grad(pred: &GrayMask, target: &GrayMask) -> Result<LossGrad> {
    check(pred, target, "f_loss")?;
    let (mut tp, mut ss, mut sg) = (0.0, 0.0, 0.0);
    for (&s, &g) in pred.data().iter().zip(target.data()) {
        tp += s * g;
        ss += s;
        sg += g;
    }
    let p = tp / (ss + EPS);
    let r = tp / (sg + EPS);
    let d = BETA2 * p + r + EPS;
    let num = (1.0 + BETA2) * p * r;
    let f = num / d;
    let df_dp = (1.0 + BETA2) * r / d - num * BETA2 / (d * d);
    let df_dr = (1.0 + BETA2) * p / d - num / (d * d);
    let mut grad = GrayMask::zeros(pred.height(), pred.width());
    for (&g, out) in target.data().iter().zip(grad.data_mut()) {
        let dp = g / (ss + EPS) - tp / ((ss + EPS) * (ss + EPS));
        let dr = g / (sg + EPS);
        *out = -(df_dp * dp + df_dr * dr);
    }
    Ok(LossGrad { value: 1.0 - f, grad })
}

pub fn f_loss(pred: &GrayMask, target: &GrayMask) -> Result<f64> {
    f_loss_grad(pred, target).map(|l| l.value)
}

/// Loss configuration for [`hybrid_loss`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub flags: LossFlags,
    pub ssim_window: usize,
}

impl LossConfig {
    pub fn new(flags: LossFlags) -> Self {
        LossConfig { flags, ssim_window: SSIM_WINDOW }
    }
}

/// Probability maps produced by one forward pass for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMaps {
    pub cascade: Cascade,
    pub fused: GrayMask,
    pub detail: Option<GrayMask>,
    pub body: Option<GrayMask>,
}

/// Gradients of the total loss with respect to each map in [`SaliencyMaps`].
#[derive(Clone, Debug)]
pub struct MapGrads {
    pub fused: GrayMask,
    pub detail: Option<GrayMask>,
    pub body: Option<GrayMask>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_detail: f64,
    pub l_body: f64,
    pub l_total: f64,
    pub components: BTreeMap<String, f64>,
}

impl LossReport {
    fn compose(l_detail: f64, l_body: f64, components: BTreeMap<String, f64>) -> Self {
        LossReport { l_detail, l_body, l_total: 0.5 * (l_detail + l_body), components }
    }

    /// Average several reports, re-deriving the total from the averaged parts.
    pub fn mean(reports: &[LossReport]) -> Self {
        let n = reports.len().max(1) as f64;
        let mut components: BTreeMap<String, f64> = BTreeMap::new();
        for r in reports {
            for (k, v) in &r.components {
                *components.entry(k.clone()).or_default() += v / n;
            }
        }
        let l_detail = reports.iter().map(|r| r.l_detail).sum::<f64>() / n;
        let l_body = reports.iter().map(|r| r.l_body).sum::<f64>() / n;
        LossReport::compose(l_detail, l_body, components)
    }

    pub fn is_finite(&self) -> bool {
        self.l_total.is_finite() && self.components.values().all(|v| v.is_finite())
    }
}

fn add_scaled(acc: &mut GrayMask, g: &GrayMask, s: f64) {
    for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += s * b;
    }
}

/// `l = (l_detail + l_body) / 2` with `l_detail = CE (+ SSIM)` on the first-stage
/// map and `l_body = CE (+ IoU + F)` on the fused map.
///
/// For body-first cascades the first-stage term supervises the body map with
/// the body label; direct models have no first-stage term.
pub fn hybrid_loss(maps: &SaliencyMaps, gt: &GroundTruth, detail_gt: &DetailLabel, cfg: &LossConfig) -> Result<(LossReport, MapGrads)> {
    let g = gt.to_gray();
    maps.fused.ensure_same_dims(&g, "hybrid_loss")?;
    let mut comps = BTreeMap::new();
    let mut grads = MapGrads {
        fused: GrayMask::zeros(g.height(), g.width()),
        detail: maps.detail.as_ref().map(|m| GrayMask::zeros(m.height(), m.width())),
        body: maps.body.as_ref().map(|m| GrayMask::zeros(m.height(), m.width())),
    };

    let mut l_detail = 0.0;
    let first = match maps.cascade {
        Cascade::Direct => None,
        Cascade::DetailFirst => {
            let m = maps.detail.as_ref().ok_or_else(|| SodError::Config("detail-first outputs lack a detail map".into()))?;
            Some((m, detail_gt.map().clone(), "ce_detail", grads.detail.as_mut().expect("detail grad")))
        }
        Cascade::BodyFirst => {
            let m = maps.body.as_ref().ok_or_else(|| SodError::Config("body-first outputs lack a body map".into()))?;
            let body_gt = decompose_body(gt, detail_gt)?;
            Some((m, body_gt, "ce_first_body", grads.body.as_mut().expect("body grad")))
        }
    };
    if let Some((map, target, key, grad)) = first {
        let ce = ce_loss_grad(map, &target)?;
        add_scaled(grad, &ce.grad, 0.5);
        comps.insert(key.to_string(), ce.value);
        l_detail += ce.value;
        if cfg.flags.ssim {
            let s = ssim_loss_grad(map, &target, cfg.ssim_window)?;
            add_scaled(grad, &s.grad, 0.5);
            comps.insert("ssim".to_string(), s.value);
            l_detail += s.value;
        }
    }

    let ce = ce_loss_grad(&maps.fused, &g)?;
    add_scaled(&mut grads.fused, &ce.grad, 0.5);
    comps.insert("ce_body".to_string(), ce.value);
    let mut l_body = ce.value;
    if cfg.flags.iou_f {
        let iou = iou_loss_grad(&maps.fused, &g)?;
        let f = f_loss_grad(&maps.fused, &g)?;
        add_scaled(&mut grads.fused, &iou.grad, 0.5);
        add_scaled(&mut grads.fused, &f.grad, 0.5);
        comps.insert("iou".to_string(), iou.value);
        comps.insert("f".to_string(), f.value);
        l_body += iou.value + f.value;
    }
    Ok((LossReport::compose(l_detail, l_body, comps), grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::labelgen::decompose_detail;
    use rand::{Rng, SeedableRng};

    fn rand_map(h: usize, w: usize, seed: u64, lo: f64, hi: f64) -> GrayMask {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Grid::from_fn(h, w, |_, _| rng.random_range(lo..hi))
    }

    fn binary(h: usize, w: usize, f: impl Fn(usize, usize) -> bool) -> GrayMask {
        Grid::from_fn(h, w, |y, x| if f(y, x) { 1.0 } else { 0.0 })
    }

    /// Central finite differences of `f` at every pixel of `pred`.
    fn fd_check(pred: &GrayMask, f: impl Fn(&GrayMask) -> LossGrad, tol: f64) {
        let analytic = f(pred).grad;
        let h = 1e-6;
        for i in 0..pred.len() {
            let mut p = pred.clone();
            p.data_mut()[i] += h;
            let up = f(&p).value;
            p.data_mut()[i] -= 2.0 * h;
            let down = f(&p).value;
            let fd = (up - down) / (2.0 * h);
            let an = analytic.data()[i];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            assert!(rel < tol, "pixel {i}: fd {fd} vs analytic {an}");
        }
    }

    #[test]
    fn ce_closed_forms() {
        let half = GrayMask::filled(4, 4, 0.5);
        assert!((ce_loss(&half, &half).unwrap() - 2f64.ln()).abs() < 1e-12);
        let t = binary(3, 3, |y, x| (y + x) % 2 == 0);
        assert!(ce_loss(&t, &t).unwrap() < 2e-6);
        let p = GrayMask::filled(2, 2, 0.9);
        let one = GrayMask::filled(2, 2, 1.0);
        assert!((ce_loss(&p, &one).unwrap() - 0.10536051565782628).abs() < 1e-12);
    }

    #[test]
    fn ce_rejects_shape_mismatch() {
        assert!(ce_loss(&GrayMask::zeros(2, 2), &GrayMask::zeros(2, 3)).is_err());
    }

    #[test]
    fn ssim_identity_and_constants() {
        let a = rand_map(16, 16, 1, 0.0, 1.0);
        assert_eq!(ssim_loss(&a, &a).unwrap(), 0.0);
        let c = GrayMask::filled(12, 12, 0.3);
        assert!(ssim_loss(&c, &c).unwrap().abs() < 1e-15);
    }

    #[test]
    fn ssim_anticorrelated_exceeds_one() {
        let t = binary(16, 16, |_, x| x < 8);
        let inv = t.map(|v| 1.0 - v);
        let l = ssim_loss(&inv, &t).unwrap();
        assert!(l > 1.0 && l <= 2.0, "{l}");
    }

    #[test]
    fn ssim_small_map_uses_global_window() {
        let a = rand_map(5, 7, 2, 0.0, 1.0);
        let b = rand_map(5, 7, 3, 0.0, 1.0);
        let l = ssim_loss_grad(&a, &b, 11).unwrap().value;
        let n = 35.0;
        let mx = a.data().iter().sum::<f64>() / n;
        let my = b.data().iter().sum::<f64>() / n;
        let vx = a.data().iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
        let vy = b.data().iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
        let c = a.data().iter().zip(b.data()).map(|(p, q)| (p - mx) * (q - my)).sum::<f64>() / n;
        let s = (2.0 * mx * my + SSIM_C1) * (2.0 * c + SSIM_C2) / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
        assert!((l - (1.0 - s)).abs() < 1e-12);
    }

    #[test]
    fn ssim_symmetric() {
        let a = rand_map(14, 13, 4, 0.0, 1.0);
        let b = rand_map(14, 13, 5, 0.0, 1.0);
        assert_eq!(ssim_loss(&a, &b).unwrap(), ssim_loss(&b, &a).unwrap());
    }

    #[test]
    fn iou_closed_forms() {
        let t = binary(6, 6, |y, _| y < 3);
        assert_eq!(iou_loss(&t, &t).unwrap(), 0.0);
        let d = binary(6, 6, |y, _| y >= 3);
        assert_eq!(iou_loss(&d, &t).unwrap(), 1.0);
        let half = t.map(|v| 0.5 * v);
        assert!((iou_loss(&half, &t).unwrap() - 0.5).abs() < 1e-12);
        let z = GrayMask::zeros(3, 3);
        assert_eq!(iou_loss(&z, &z).unwrap(), 0.0);
        let a = rand_map(5, 5, 6, 0.0, 1.0);
        let b = rand_map(5, 5, 7, 0.0, 1.0);
        assert!((iou_loss(&a, &b).unwrap() - iou_loss(&b, &a).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn f_loss_closed_forms() {
        let t = binary(8, 8, |y, x| y > 2 && x > 1);
        assert!(f_loss(&t, &t).unwrap() < 1e-5);
        assert!((f_loss(&GrayMask::zeros(8, 8), &t).unwrap() - 1.0).abs() < 1e-9);
        let half = t.map(|v| 0.5 * v);
        assert!((f_loss(&half, &t).unwrap() - 0.1875).abs() < 1e-3);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let p = rand_map(8, 8, 10, 0.05, 0.95);
        let t = rand_map(8, 8, 11, 0.0, 1.0);
        let tb = binary(8, 8, |y, x| (y * 3 + x) % 5 < 2);
        fd_check(&p, |q| ce_loss_grad(q, &t).unwrap(), 1e-4);
        fd_check(&p, |q| ssim_loss_grad(q, &t, 3).unwrap(), 1e-4);
        fd_check(&p, |q| ssim_loss_grad(q, &t, 11).unwrap(), 1e-4);
        fd_check(&p, |q| iou_loss_grad(q, &tb).unwrap(), 1e-4);
        fd_check(&p, |q| f_loss_grad(q, &tb).unwrap(), 1e-4);
    }

    #[test]
    fn hybrid_composition_and_flags() {
        let gt = GroundTruth::new(Grid::from_fn(12, 12, |y, x| (3..9).contains(&y) && (2..10).contains(&x)));
        let detail = decompose_detail(&gt);
        let fused = rand_map(12, 12, 20, 0.1, 0.9);
        let dmap = rand_map(12, 12, 21, 0.1, 0.9);
        let maps = SaliencyMaps { cascade: Cascade::DetailFirst, fused, detail: Some(dmap), body: Some(rand_map(12, 12, 22, 0.1, 0.9)) };
        let none = LossConfig::new(LossFlags { ssim: false, iou_f: false });
        let (r, _) = hybrid_loss(&maps, &gt, &detail, &none).unwrap();
        assert_eq!(r.l_total, 0.5 * (r.components["ce_detail"] + r.components["ce_body"]));
        let all = LossConfig::new(LossFlags { ssim: true, iou_f: true });
        let (r, g) = hybrid_loss(&maps, &gt, &detail, &all).unwrap();
        assert_eq!(r.l_total, 0.5 * (r.l_detail + r.l_body));
        assert_eq!(r.components.len(), 5);
        assert!(g.body.unwrap().data().iter().all(|&v| v == 0.0));

        let perfect = SaliencyMaps {
            cascade: Cascade::DetailFirst,
            fused: gt.to_gray(),
            detail: Some(detail.map().clone()),
            body: None,
        };
        let (r, _) = hybrid_loss(&perfect, &gt, &detail, &LossConfig::new(LossFlags { ssim: false, iou_f: true })).unwrap();
        // soft detail targets leave their own entropy in the CE term
        assert!(r.l_body < 1e-4);
    }

    #[test]
    fn body_first_supervises_body_map() {
        let gt = GroundTruth::new(Grid::from_fn(10, 10, |y, x| (2..8).contains(&y) && (2..8).contains(&x)));
        let detail = decompose_detail(&gt);
        let body = decompose_body(&gt, &detail).unwrap();
        let maps = SaliencyMaps { cascade: Cascade::BodyFirst, fused: gt.to_gray(), detail: None, body: Some(body.clone()) };
        let (r, g) = hybrid_loss(&maps, &gt, &detail, &LossConfig::new(LossFlags { ssim: false, iou_f: false })).unwrap();
        assert!(r.components.contains_key("ce_first_body"));
        assert!(g.body.is_some());
        assert!((r.l_detail - ce_loss(&body, &body).unwrap()).abs() < 1e-15);
    }
}

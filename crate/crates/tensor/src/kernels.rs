//! Forward and backward kernels. All loops run in a fixed order so results are
//! bitwise reproducible.

use crate::scalar::{gemm, Layout, Scalar};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
}

pub fn conv_out_size(input: usize, k: usize, g: ConvGeom) -> usize {
    (input + 2 * g.pad - k) / g.stride + 1
}

fn is_pointwise(k: usize, g: ConvGeom) -> bool {
    k == 1 && g.stride == 1 && g.pad == 0
}

/// Unfold one sample `[ci, h, w]` into `[ci*k*k, oh*ow]`.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(x: &[T], ci: usize, h: usize, w: usize, k: usize, g: ConvGeom, oh: usize, ow: usize, col: &mut [T]) {
    let p = oh * ow;
    for c in 0..ci {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((c * k + ky) * k + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Fold `[ci*k*k, oh*ow]` back into `[ci, h, w]`, accumulating.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(col: &[T], ci: usize, h: usize, w: usize, k: usize, g: ConvGeom, oh: usize, ow: usize, x: &mut [T]) {
    let p = oh * ow;
    for c in 0..ci {
        let plane = &mut x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((c * k + ky) * k + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// 2-D convolution (cross-correlation) with square kernels.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, g: ConvGeom) -> Tensor<T> {
    let [n, ci, h, wd] = x.shape().0;
    let [co, wci, k, _] = w.shape().0;
    assert_eq!(ci, wci, "conv2d input channels");
    let oh = conv_out_size(h, k, g);
    let ow = conv_out_size(wd, k, g);
    let p = oh * ow;
    let kk = ci * k * k;
    let mut out = Tensor::zeros(Shape::new(n, co, oh, ow));
    let mut col = if is_pointwise(k, g) { Vec::new() } else { vec![T::zero(); kk * p] };
    for s in 0..n {
        let xs = x.sample(s);
        let src: &[T] = if is_pointwise(k, g) {
            xs
        } else {
            im2col(xs, ci, h, wd, k, g, oh, ow, &mut col);
            &col
        };
        let dst = &mut out.data_mut()[s * co * p..(s + 1) * co * p];
        if let Some(b) = b {
            for (c, chunk) in dst.chunks_mut(p).enumerate() {
                chunk.fill(b.data()[c]);
            }
        }
        gemm(
            w.data(),
            Layout::row_major(co, kk),
            src,
            Layout::row_major(kk, p),
            if b.is_some() { T::one() } else { T::zero() },
            dst,
            Layout::row_major(co, p),
        );
    }
    out
}

pub struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Option<Tensor<T>>,
    pub db: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    g: ConvGeom,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let [n, ci, h, wd] = x.shape().0;
    let [co, _, k, _] = w.shape().0;
    let [_, _, oh, ow] = gout.shape().0;
    let p = oh * ow;
    let kk = ci * k * k;
    let pointwise = is_pointwise(k, g);
    let mut dx = need.0.then(|| Tensor::zeros(x.shape()));
    let mut dw = need.1.then(|| Tensor::zeros(w.shape()));
    let mut db = need.2.then(|| Tensor::zeros(Shape::new(1, co, 1, 1)));
    let mut col = if pointwise || !need.1 { Vec::new() } else { vec![T::zero(); kk * p] };
    let mut dcol = if pointwise || !need.0 { Vec::new() } else { vec![T::zero(); kk * p] };
    for s in 0..n {
        let go = gout.sample(s);
        if let Some(db) = db.as_mut() {
            for (c, chunk) in go.chunks(p).enumerate() {
                db.data_mut()[c] += chunk.iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = dw.as_mut() {
            let xs = x.sample(s);
            let src: &[T] = if pointwise {
                xs
            } else {
                im2col(xs, ci, h, wd, k, g, oh, ow, &mut col);
                &col
            };
            // dW[co, kk] += gout[co, p] * col[kk, p]^T
            gemm(
                go,
                Layout::row_major(co, p),
                src,
                Layout::row_major(kk, p).transposed(),
                T::one(),
                dw.data_mut(),
                Layout::row_major(co, kk),
            );
        }
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx.data_mut()[s * ci * h * wd..(s + 1) * ci * h * wd];
            if pointwise {
                gemm(
                    w.data(),
                    Layout::row_major(co, kk).transposed(),
                    go,
                    Layout::row_major(co, p),
                    T::one(),
                    dxs,
                    Layout::row_major(kk, p),
                );
            } else {
                gemm(
                    w.data(),
                    Layout::row_major(co, kk).transposed(),
                    go,
                    Layout::row_major(co, p),
                    T::zero(),
                    &mut dcol,
                    Layout::row_major(kk, p),
                );
                col2im(&dcol, ci, h, wd, k, g, oh, ow, dxs);
            }
        }
    }
    ConvGrads { dx, dw, db }
}

/// Elementwise binary op with size-1 broadcasting on either side.
pub fn broadcast_binary<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, out_shape: Shape, f: impl Fn(T, T) -> T) -> Tensor<T> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::from_vec(out_shape, data).expect("same shape");
    }
    let sa = a.shape().broadcast_strides();
    let sb = b.shape().broadcast_strides();
    let [n, c, h, w] = out_shape.0;
    let mut out = Vec::with_capacity(out_shape.numel());
    let (ad, bd) = (a.data(), b.data());
    for i0 in 0..n {
        for i1 in 0..c {
            for i2 in 0..h {
                let ba = i0 * sa[0] + i1 * sa[1] + i2 * sa[2];
                let bb = i0 * sb[0] + i1 * sb[1] + i2 * sb[2];
                for i3 in 0..w {
                    out.push(f(ad[ba + i3 * sa[3]], bd[bb + i3 * sb[3]]));
                }
            }
        }
    }
    Tensor::from_vec(out_shape, out).expect("broadcast shape")
}

/// Sum a gradient of `full` shape down to `target` (inverse of broadcasting).
pub fn reduce_to<T: Scalar>(g: &Tensor<T>, target: Shape) -> Tensor<T> {
    if g.shape() == target {
        return g.clone();
    }
    let st = target.broadcast_strides();
    let [n, c, h, w] = g.shape().0;
    let mut out = Tensor::zeros(target);
    let gd = g.data();
    let od = out.data_mut();
    let mut k = 0;
    for i0 in 0..n {
        for i1 in 0..c {
            for i2 in 0..h {
                let base = i0 * st[0] + i1 * st[1] + i2 * st[2];
                for i3 in 0..w {
                    od[base + i3 * st[3]] += gd[k];
                    k += 1;
                }
            }
        }
    }
    out
}

/// Multiply `g` by `other` broadcast to `g`'s shape, then reduce to `target`.
pub fn mul_reduce_to<T: Scalar>(g: &Tensor<T>, other: &Tensor<T>, target: Shape) -> Tensor<T> {
    let prod = broadcast_binary(g, other, g.shape(), |x, y| x * y);
    reduce_to(&prod, target)
}

/// Bin boundaries of adaptive average pooling: bin `i` covers `[start, end)`.
pub fn adaptive_bins(input: usize, output: usize) -> Vec<(usize, usize)> {
    (0..output)
        .map(|i| {
            let start = i * input / output;
            let end = ((i + 1) * input).div_ceil(output);
            (start, end)
        })
        .collect()
}

pub fn adaptive_avg_pool<T: Scalar>(x: &Tensor<T>, oh: usize, ow: usize) -> Tensor<T> {
    let [n, c, h, w] = x.shape().0;
    let by = adaptive_bins(h, oh);
    let bx = adaptive_bins(w, ow);
    let mut out = Tensor::zeros(Shape::new(n, c, oh, ow));
    for s in 0..n {
        for ch in 0..c {
            let src = x.plane(s, ch);
            let dst = out.plane_mut(s, ch);
            for (oy, &(y0, y1)) in by.iter().enumerate() {
                for (ox, &(x0, x1)) in bx.iter().enumerate() {
                    let mut acc = T::zero();
                    for yy in y0..y1 {
                        for xx in x0..x1 {
                            acc += src[yy * w + xx];
                        }
                    }
                    dst[oy * ow + ox] = acc / T::of(((y1 - y0) * (x1 - x0)) as f64);
                }
            }
        }
    }
    out
}

pub fn adaptive_avg_pool_backward<T: Scalar>(gout: &Tensor<T>, in_shape: Shape) -> Tensor<T> {
    let [n, c, h, w] = in_shape.0;
    let [_, _, oh, ow] = gout.shape().0;
    let by = adaptive_bins(h, oh);
    let bx = adaptive_bins(w, ow);
    let mut dx = Tensor::zeros(in_shape);
    for s in 0..n {
        for ch in 0..c {
            let go = gout.plane(s, ch).to_vec();
            let dst = dx.plane_mut(s, ch);
            for (oy, &(y0, y1)) in by.iter().enumerate() {
                for (ox, &(x0, x1)) in bx.iter().enumerate() {
                    let v = go[oy * ow + ox] / T::of(((y1 - y0) * (x1 - x0)) as f64);
                    for yy in y0..y1 {
                        for xx in x0..x1 {
                            dst[yy * w + xx] += v;
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Per-axis bilinear taps (half-pixel centers, no corner alignment).
pub fn bilinear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = if i0 + 1 < input { i0 + 1 } else { i0 };
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn resize_bilinear<T: Scalar>(x: &Tensor<T>, oh: usize, ow: usize) -> Tensor<T> {
    let [n, c, h, w] = x.shape().0;
    if h == oh && w == ow {
        return x.clone();
    }
    let ty = bilinear_taps(h, oh);
    let tx: Vec<(usize, usize, T)> = bilinear_taps(w, ow).into_iter().map(|(a, b, l)| (a, b, T::of(l))).collect();
    let mut out = Tensor::zeros(Shape::new(n, c, oh, ow));
    for s in 0..n {
        for ch in 0..c {
            let src = x.plane(s, ch);
            let dst = out.plane_mut(s, ch);
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                let ly = T::of(ly);
                let r0 = &src[y0 * w..(y0 + 1) * w];
                let r1 = &src[y1 * w..(y1 + 1) * w];
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let top = r0[x0] + (r0[x1] - r0[x0]) * lx;
                    let bot = r1[x0] + (r1[x1] - r1[x0]) * lx;
                    dst[oy * ow + ox] = top + (bot - top) * ly;
                }
            }
        }
    }
    out
}

pub fn resize_bilinear_backward<T: Scalar>(gout: &Tensor<T>, in_shape: Shape) -> Tensor<T> {
    let [n, c, h, w] = in_shape.0;
    let [_, _, oh, ow] = gout.shape().0;
    if h == oh && w == ow {
        return gout.clone();
    }
    let ty = bilinear_taps(h, oh);
    let tx: Vec<(usize, usize, T)> = bilinear_taps(w, ow).into_iter().map(|(a, b, l)| (a, b, T::of(l))).collect();
    let mut dx = Tensor::zeros(in_shape);
    let one = T::one();
    for s in 0..n {
        for ch in 0..c {
            let go = gout.plane(s, ch).to_vec();
            let dst = dx.plane_mut(s, ch);
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                let ly = T::of(ly);
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let g = go[oy * ow + ox];
                    let gt = g * (one - ly);
                    let gb = g * ly;
                    dst[y0 * w + x0] += gt * (one - lx);
                    dst[y0 * w + x1] += gt * lx;
                    dst[y1 * w + x0] += gb * (one - lx);
                    dst[y1 * w + x1] += gb * lx;
                }
            }
        }
    }
    dx
}

/// Saved statistics of a group normalization forward pass.
#[derive(Clone, Debug)]
pub struct GroupStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

pub fn group_norm<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, groups: usize, eps: T) -> (Tensor<T>, GroupStats<T>) {
    let [n, c, h, w] = x.shape().0;
    let cg = c / groups;
    let len = cg * h * w;
    let count = T::of(len as f64);
    let mut out = Tensor::zeros(x.shape());
    let mut stats = GroupStats { mean: Vec::with_capacity(n * groups), rstd: Vec::with_capacity(n * groups) };
    for s in 0..n {
        for gi in 0..groups {
            let start = (s * c + gi * cg) * h * w;
            let xs = &x.data()[start..start + len];
            let mean = xs.iter().copied().sum::<T>() / count;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
            let rstd = T::one() / (var + eps).sqrt();
            stats.mean.push(mean);
            stats.rstd.push(rstd);
            let od = &mut out.data_mut()[start..start + len];
            for (ci, (src, dst)) in xs.chunks(h * w).zip(od.chunks_mut(h * w)).enumerate() {
                let ch = gi * cg + ci;
                let (ga, be) = (gamma.data()[ch], beta.data()[ch]);
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o = (v - mean) * rstd * ga + be;
                }
            }
        }
    }
    (out, stats)
}

pub fn group_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    gout: &Tensor<T>,
    groups: usize,
    stats: &GroupStats<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = x.shape().0;
    let cg = c / groups;
    let hw = h * w;
    let len = cg * hw;
    let count = T::of(len as f64);
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = Tensor::zeros(gamma.shape());
    let mut dbeta = Tensor::zeros(gamma.shape());
    for s in 0..n {
        for gi in 0..groups {
            let k = s * groups + gi;
            let (mean, rstd) = (stats.mean[k], stats.rstd[k]);
            let start = (s * c + gi * cg) * hw;
            let xs = &x.data()[start..start + len];
            let gs = &gout.data()[start..start + len];
            let mut sum_dxhat = T::zero();
            let mut sum_dxhat_xhat = T::zero();
            for ci in 0..cg {
                let ch = gi * cg + ci;
                let ga = gamma.data()[ch];
                let (mut dg, mut db) = (T::zero(), T::zero());
                for i in ci * hw..(ci + 1) * hw {
                    let xhat = (xs[i] - mean) * rstd;
                    dg += gs[i] * xhat;
                    db += gs[i];
                    let dxhat = gs[i] * ga;
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                }
                dgamma.data_mut()[ch] += dg;
                dbeta.data_mut()[ch] += db;
            }
            let m1 = sum_dxhat / count;
            let m2 = sum_dxhat_xhat / count;
            let dd = &mut dx.data_mut()[start..start + len];
            for ci in 0..cg {
                let ga = gamma.data()[gi * cg + ci];
                for i in ci * hw..(ci + 1) * hw {
                    let xhat = (xs[i] - mean) * rstd;
                    dd[i] = rstd * (gs[i] * ga - m1 - xhat * m2);
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub fn concat_channels<T: Scalar>(xs: &[&Tensor<T>]) -> Tensor<T> {
    let first = xs[0].shape();
    let total_c: usize = xs.iter().map(|t| t.shape().c()).sum();
    let out_shape = Shape::new(first.n(), total_c, first.h(), first.w());
    let mut data = Vec::with_capacity(out_shape.numel());
    for s in 0..first.n() {
        for t in xs {
            data.extend_from_slice(t.sample(s));
        }
    }
    Tensor::from_vec(out_shape, data).expect("concat shape")
}

/// Slice channel range `[c0, c0+cn)` out of `g`.
pub fn channel_slice<T: Scalar>(g: &Tensor<T>, c0: usize, cn: usize) -> Tensor<T> {
    let [n, c, h, w] = g.shape().0;
    let mut data = Vec::with_capacity(n * cn * h * w);
    for s in 0..n {
        let start = (s * c + c0) * h * w;
        data.extend_from_slice(&g.data()[start..start + cn * h * w]);
    }
    Tensor::from_vec(Shape::new(n, cn, h, w), data).expect("slice shape")
}

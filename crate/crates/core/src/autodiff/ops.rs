//! Forward/backward kernels for every graph operator.
//!
//! Convolutions go through an im2col buffer and a small GEMM; the same
//! buffer is rebuilt in the backward pass instead of being cached, trading
//! a little compute for activation-sized memory.

use crate::tensor::{Scalar, Tensor};

/// Unfold one batch item into (cin*kh*kw) x (oh*ow) columns.
fn im2col<T: Scalar>(
    x: &Tensor<T>,
    bi: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    cols: &mut [T],
) {
    let (h, w) = (x.height(), x.width());
    let p = oh * ow;
    let mut r = 0usize;
    for ci in 0..x.channels() {
        let plane = x.plane(bi, ci);
        for dy in 0..kernel {
            for dx in 0..kernel {
                let row = &mut cols[r * p..(r + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * stride + dy) as isize - padding as isize;
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.iter_mut().for_each(|v| *v = T::ZERO);
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + dx) as isize - padding as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            T::ZERO
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
                r += 1;
            }
        }
    }
}

/// Scatter-add columns back onto the input layout (adjoint of im2col).
fn col2im_add<T: Scalar>(
    cols: &[T],
    gx: &mut Tensor<T>,
    bi: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
) {
    let (h, w) = (gx.height(), gx.width());
    let p = oh * ow;
    let mut r = 0usize;
    for ci in 0..gx.channels() {
        let plane = gx.plane_mut(bi, ci);
        for dy in 0..kernel {
            for dx in 0..kernel {
                let row = &cols[r * p..(r + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * stride + dy) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * stride + dx) as isize - padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += row[oy * ow + ox];
                        }
                    }
                }
                r += 1;
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Tensor<T> {
    let [cout, cin, kh, kw] = w.shape();
    debug_assert_eq!(kh, kw);
    debug_assert_eq!(cin, x.channels());
    let kernel = kh;
    let oh = (x.height() + 2 * padding - kernel) / stride + 1;
    let ow = (x.width() + 2 * padding - kernel) / stride + 1;
    let r_dim = cin * kernel * kernel;
    let p = oh * ow;

    let mut out = Tensor::zeros(x.batch(), cout, oh, ow);
    let mut cols = vec![T::ZERO; r_dim * p];
    for bi in 0..x.batch() {
        im2col(x, bi, kernel, stride, padding, oh, ow, &mut cols);
        for co in 0..cout {
            let w_row = &w.data()[co * r_dim..(co + 1) * r_dim];
            let out_plane = out.plane_mut(bi, co);
            if let Some(bias) = b {
                let bv = bias.data()[co];
                out_plane.iter_mut().for_each(|v| *v = bv);
            }
            for (r, &wv) in w_row.iter().enumerate() {
                if wv == T::ZERO {
                    continue;
                }
                let col_row = &cols[r * p..(r + 1) * p];
                for (o, c) in out_plane.iter_mut().zip(col_row.iter()) {
                    *o += wv * *c;
                }
            }
        }
    }
    out
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
    stride: usize,
    padding: usize,
    want_gx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let [cout, cin, kernel, _] = w.shape();
    let (oh, ow) = (gy.height(), gy.width());
    let r_dim = cin * kernel * kernel;
    let p = oh * ow;

    let mut gw = Tensor::zeros(cout, cin, kernel, kernel);
    let mut gb = Tensor::zeros(cout, 1, 1, 1);
    let mut gx = if want_gx {
        Some(Tensor::zeros(x.batch(), cin, x.height(), x.width()))
    } else {
        None
    };

    let mut cols = vec![T::ZERO; r_dim * p];
    let mut cols_g = vec![T::ZERO; r_dim * p];
    for bi in 0..x.batch() {
        im2col(x, bi, kernel, stride, padding, oh, ow, &mut cols);
        for co in 0..cout {
            let gy_plane = gy.plane(bi, co);
            let gw_row = &mut gw.data_mut()[co * r_dim..(co + 1) * r_dim];
            for (r, gw_v) in gw_row.iter_mut().enumerate() {
                let col_row = &cols[r * p..(r + 1) * p];
                let mut acc = T::ZERO;
                for (g, c) in gy_plane.iter().zip(col_row.iter()) {
                    acc += *g * *c;
                }
                *gw_v += acc;
            }
            let mut s = T::ZERO;
            for g in gy_plane.iter() {
                s += *g;
            }
            gb.data_mut()[co] += s;
        }
        if let Some(gx_t) = gx.as_mut() {
            cols_g.iter_mut().for_each(|v| *v = T::ZERO);
            for co in 0..cout {
                let gy_plane = gy.plane(bi, co);
                let w_row = &w.data()[co * r_dim..(co + 1) * r_dim];
                for (r, &wv) in w_row.iter().enumerate() {
                    if wv == T::ZERO {
                        continue;
                    }
                    let dst = &mut cols_g[r * p..(r + 1) * p];
                    for (d, g) in dst.iter_mut().zip(gy_plane.iter()) {
                        *d += wv * *g;
                    }
                }
            }
            col2im_add(&cols_g, gx_t, bi, kernel, stride, padding, oh, ow);
        }
    }
    (gx, gw, gb)
}

pub fn conv_transpose2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
) -> Tensor<T> {
    let [cin, cout, kernel, _] = w.shape();
    debug_assert_eq!(cin, x.channels());
    let (h, win) = (x.height(), x.width());
    let oh = (h - 1) * stride + kernel;
    let ow = (win - 1) * stride + kernel;
    let mut out = Tensor::zeros(x.batch(), cout, oh, ow);
    for bi in 0..x.batch() {
        if let Some(bias) = b {
            for co in 0..cout {
                let bv = bias.data()[co];
                out.plane_mut(bi, co).iter_mut().for_each(|v| *v = bv);
            }
        }
        for ci in 0..cin {
            let x_plane = x.plane(bi, ci).to_vec();
            for co in 0..cout {
                let w_sub =
                    &w.data()[(ci * cout + co) * kernel * kernel..(ci * cout + co + 1) * kernel * kernel];
                let out_plane = out.plane_mut(bi, co);
                for y in 0..h {
                    for dy in 0..kernel {
                        let orow = (y * stride + dy) * ow;
                        for xx in 0..win {
                            let v = x_plane[y * win + xx];
                            if v == T::ZERO {
                                continue;
                            }
                            let base = orow + xx * stride;
                            for dx in 0..kernel {
                                out_plane[base + dx] += v * w_sub[dy * kernel + dx];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
    stride: usize,
    want_gx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let [cin, cout, kernel, _] = w.shape();
    let (h, win) = (x.height(), x.width());
    let ow = gy.width();
    let mut gw = Tensor::zeros(cin, cout, kernel, kernel);
    let mut gb = Tensor::zeros(cout, 1, 1, 1);
    let mut gx = if want_gx {
        Some(Tensor::zeros(x.batch(), cin, h, win))
    } else {
        None
    };
    for bi in 0..x.batch() {
        for co in 0..cout {
            let mut s = T::ZERO;
            for g in gy.plane(bi, co) {
                s += *g;
            }
            gb.data_mut()[co] += s;
        }
        for ci in 0..cin {
            let x_plane = x.plane(bi, ci);
            for co in 0..cout {
                let gy_plane = gy.plane(bi, co);
                let w_base = (ci * cout + co) * kernel * kernel;
                for y in 0..h {
                    for dy in 0..kernel {
                        let orow = (y * stride + dy) * ow;
                        for xx in 0..win {
                            let base = orow + xx * stride;
                            let xv = x_plane[y * win + xx];
                            let mut gxv = T::ZERO;
                            for dx in 0..kernel {
                                let g = gy_plane[base + dx];
                                gw.data_mut()[w_base + dy * kernel + dx] += xv * g;
                                gxv += w.data()[w_base + dy * kernel + dx] * g;
                            }
                            if let Some(gx_t) = gx.as_mut() {
                                gx_t.plane_mut(bi, ci)[y * win + xx] += gxv;
                            }
                        }
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

pub fn linear_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Tensor<T> {
    let out_f = w.shape()[0];
    let in_f = w.shape()[1];
    debug_assert_eq!(in_f, x.channels());
    let mut out = Tensor::zeros(x.batch(), out_f, 1, 1);
    for bi in 0..x.batch() {
        for o in 0..out_f {
            let w_row = &w.data()[o * in_f..(o + 1) * in_f];
            let mut acc = match b {
                Some(bias) => bias.data()[o],
                None => T::ZERO,
            };
            for i in 0..in_f {
                acc += w_row[i] * x.at(bi, i, 0, 0);
            }
            *out.at_mut(bi, o, 0, 0) = acc;
        }
    }
    out
}

pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
    want_gx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let out_f = w.shape()[0];
    let in_f = w.shape()[1];
    let mut gw = Tensor::zeros(out_f, in_f, 1, 1);
    let mut gb = Tensor::zeros(out_f, 1, 1, 1);
    let mut gx = if want_gx {
        Some(Tensor::zeros(x.batch(), in_f, 1, 1))
    } else {
        None
    };
    for bi in 0..x.batch() {
        for o in 0..out_f {
            let g = gy.at(bi, o, 0, 0);
            gb.data_mut()[o] += g;
            let gw_row = &mut gw.data_mut()[o * in_f..(o + 1) * in_f];
            for i in 0..in_f {
                gw_row[i] += g * x.at(bi, i, 0, 0);
            }
            if let Some(gx_t) = gx.as_mut() {
                let w_row = &w.data()[o * in_f..(o + 1) * in_f];
                for i in 0..in_f {
                    *gx_t.at_mut(bi, i, 0, 0) += g * w_row[i];
                }
            }
        }
    }
    (gx, gw, gb)
}

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < T::ZERO {
            *v = T::ZERO;
        }
    }
    out
}

pub fn relu_backward<T: Scalar>(x: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let mut gx = gy.clone();
    for (g, v) in gx.data_mut().iter_mut().zip(x.data().iter()) {
        if !(*v > T::ZERO) {
            *g = T::ZERO;
        }
    }
    gx
}

pub fn sigmoid_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = T::ONE / (T::ONE + (-*v).exp());
    }
    out
}

/// Backward from the cached sigmoid *output*.
pub fn sigmoid_backward<T: Scalar>(y: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let mut gx = gy.clone();
    for (g, s) in gx.data_mut().iter_mut().zip(y.data().iter()) {
        *g = *g * *s * (T::ONE - *s);
    }
    gx
}

pub struct BnCache<T> {
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
    pub train: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn batchnorm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &[T],
    running_var: &[T],
    eps: f64,
    momentum: f64,
    train: bool,
) -> (Tensor<T>, BnCache<T>, Option<(Vec<T>, Vec<T>)>) {
    let (b, c, h, w) = (x.batch(), x.channels(), x.height(), x.width());
    let n = (b * h * w) as f64;
    let eps_t = T::from_f64(eps);
    let mut mean = vec![T::ZERO; c];
    let mut inv_std = vec![T::ZERO; c];
    let mut updates = None;

    if train {
        let mut new_rm = running_mean.to_vec();
        let mut new_rv = running_var.to_vec();
        let mom = T::from_f64(momentum);
        let keep = T::from_f64(1.0 - momentum);
        for ci in 0..c {
            let mut s = T::ZERO;
            for bi in 0..b {
                for v in x.plane(bi, ci) {
                    s += *v;
                }
            }
            let m = s * T::from_f64(1.0 / n);
            let mut var = T::ZERO;
            for bi in 0..b {
                for v in x.plane(bi, ci) {
                    let d = *v - m;
                    var += d * d;
                }
            }
            let var = var * T::from_f64(1.0 / n);
            mean[ci] = m;
            inv_std[ci] = T::ONE / (var + eps_t).sqrt();
            new_rm[ci] = keep * new_rm[ci] + mom * m;
            new_rv[ci] = keep * new_rv[ci] + mom * var;
        }
        updates = Some((new_rm, new_rv));
    } else {
        for ci in 0..c {
            mean[ci] = running_mean[ci];
            inv_std[ci] = T::ONE / (running_var[ci] + eps_t).sqrt();
        }
    }

    let mut out = Tensor::zeros(b, c, h, w);
    for bi in 0..b {
        for ci in 0..c {
            let g = gamma.data()[ci];
            let bt = beta.data()[ci];
            let (m, is) = (mean[ci], inv_std[ci]);
            for (o, v) in out.plane_mut(bi, ci).iter_mut().zip(x.plane(bi, ci)) {
                *o = g * (*v - m) * is + bt;
            }
        }
    }
    (
        out,
        BnCache {
            mean,
            inv_std,
            train,
        },
        updates,
    )
}

pub fn batchnorm_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    gy: &Tensor<T>,
    cache: &BnCache<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (b, c, h, w) = (x.batch(), x.channels(), x.height(), x.width());
    let n = T::from_f64((b * h * w) as f64);
    let mut gx = Tensor::zeros(b, c, h, w);
    let mut ggamma = Tensor::zeros(c, 1, 1, 1);
    let mut gbeta = Tensor::zeros(c, 1, 1, 1);
    for ci in 0..c {
        let (m, is) = (cache.mean[ci], cache.inv_std[ci]);
        let mut sum_gy = T::ZERO;
        let mut sum_gy_xhat = T::ZERO;
        for bi in 0..b {
            let xp = x.plane(bi, ci);
            let gp = gy.plane(bi, ci);
            for (xv, gv) in xp.iter().zip(gp.iter()) {
                sum_gy += *gv;
                sum_gy_xhat += *gv * (*xv - m) * is;
            }
        }
        ggamma.data_mut()[ci] = sum_gy_xhat;
        gbeta.data_mut()[ci] = sum_gy;
        let g = gamma.data()[ci];
        if cache.train {
            let mean_gy = sum_gy / n;
            let mean_gy_xhat = sum_gy_xhat / n;
            for bi in 0..b {
                let xp = x.plane(bi, ci).to_vec();
                let gp = gy.plane(bi, ci).to_vec();
                let dst = gx.plane_mut(bi, ci);
                for i in 0..xp.len() {
                    let xhat = (xp[i] - m) * is;
                    dst[i] = g * is * (gp[i] - mean_gy - xhat * mean_gy_xhat);
                }
            }
        } else {
            for bi in 0..b {
                let gp = gy.plane(bi, ci).to_vec();
                let dst = gx.plane_mut(bi, ci);
                for i in 0..gp.len() {
                    dst[i] = g * is * gp[i];
                }
            }
        }
    }
    (gx, ggamma, gbeta)
}

pub fn maxpool_forward<T: Scalar>(x: &Tensor<T>, size: usize, stride: usize) -> (Tensor<T>, Vec<u32>) {
    let (b, c, h, w) = (x.batch(), x.channels(), x.height(), x.width());
    let oh = (h - size) / stride + 1;
    let ow = (w - size) / stride + 1;
    let mut out = Tensor::zeros(b, c, oh, ow);
    let mut argmax = vec![0u32; b * c * oh * ow];
    let mut k = 0usize;
    for bi in 0..b {
        for ci in 0..c {
            let plane = x.plane(bi, ci);
            let op = out.plane_mut(bi, ci);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = plane[oy * stride * w + ox * stride];
                    let mut best_idx = (oy * stride * w + ox * stride) as u32;
                    for dy in 0..size {
                        for dx in 0..size {
                            let idx = (oy * stride + dy) * w + ox * stride + dx;
                            if plane[idx] > best {
                                best = plane[idx];
                                best_idx = idx as u32;
                            }
                        }
                    }
                    op[oy * ow + ox] = best;
                    argmax[k] = best_idx;
                    k += 1;
                }
            }
        }
    }
    (out, argmax)
}

pub fn maxpool_backward<T: Scalar>(
    x: &Tensor<T>,
    gy: &Tensor<T>,
    argmax: &[u32],
) -> Tensor<T> {
    let mut gx = Tensor::zeros(x.batch(), x.channels(), x.height(), x.width());
    let mut k = 0usize;
    for bi in 0..x.batch() {
        for ci in 0..x.channels() {
            let gp = gy.plane(bi, ci).to_vec();
            let dst = gx.plane_mut(bi, ci);
            for g in gp {
                dst[argmax[k] as usize] += g;
                k += 1;
            }
        }
    }
    gx
}

#[inline]
fn bcast_idx(i: usize, dim: usize) -> usize {
    if dim == 1 {
        0
    } else {
        i
    }
}

pub fn mul_broadcast_forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let [bb, bc, bh, bw] = b.shape();
    let mut out = a.clone();
    let [ab, ac, ah, aw] = a.shape();
    for bi in 0..ab {
        for ci in 0..ac {
            let bp = b.plane(bcast_idx(bi, bb), bcast_idx(ci, bc));
            let op = out.plane_mut(bi, ci);
            for y in 0..ah {
                let by = bcast_idx(y, bh);
                for x in 0..aw {
                    op[y * aw + x] = op[y * aw + x] * bp[by * bw + bcast_idx(x, bw)];
                }
            }
        }
    }
    out
}

pub fn mul_broadcast_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    gy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let [ab, ac, ah, aw] = a.shape();
    let [bb, bc, bh, bw] = b.shape();
    let mut ga = Tensor::zeros(ab, ac, ah, aw);
    let mut gb = Tensor::zeros(bb, bc, bh, bw);
    for bi in 0..ab {
        for ci in 0..ac {
            let bp_b = bcast_idx(bi, bb);
            let bp_c = bcast_idx(ci, bc);
            for y in 0..ah {
                let by = bcast_idx(y, bh);
                for x in 0..aw {
                    let bx = bcast_idx(x, bw);
                    let g = gy.at(bi, ci, y, x);
                    *ga.at_mut(bi, ci, y, x) = g * b.at(bp_b, bp_c, by, bx);
                    *gb.at_mut(bp_b, bp_c, by, bx) += g * a.at(bi, ci, y, x);
                }
            }
        }
    }
    (ga, gb)
}

pub fn emax_forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let mut out = a.clone();
    for (o, bv) in out.data_mut().iter_mut().zip(b.data().iter()) {
        if *bv > *o {
            *o = *bv;
        }
    }
    out
}

/// Ties route the gradient to the first operand.
pub fn emax_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    gy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let mut ga = gy.clone();
    let mut gb = gy.clone();
    for i in 0..gy.len() {
        if a.data()[i] >= b.data()[i] {
            gb.data_mut()[i] = T::ZERO;
        } else {
            ga.data_mut()[i] = T::ZERO;
        }
    }
    (ga, gb)
}

pub fn l1_reduce_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (b, c) = (x.batch(), x.channels());
    let mut out = Tensor::zeros(b, c, 1, 1);
    for bi in 0..b {
        for ci in 0..c {
            let mut s = T::ZERO;
            for v in x.plane(bi, ci) {
                s += v.abs();
            }
            *out.at_mut(bi, ci, 0, 0) = s;
        }
    }
    out
}

pub fn l1_reduce_backward<T: Scalar>(x: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let mut gx = Tensor::zeros(x.batch(), x.channels(), x.height(), x.width());
    for bi in 0..x.batch() {
        for ci in 0..x.channels() {
            let g = gy.at(bi, ci, 0, 0);
            let src = x.plane(bi, ci).to_vec();
            let dst = gx.plane_mut(bi, ci);
            for (d, v) in dst.iter_mut().zip(src.iter()) {
                *d = if *v > T::ZERO {
                    g
                } else if *v < T::ZERO {
                    -g
                } else {
                    T::ZERO
                };
            }
        }
    }
    gx
}

pub fn add_forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let mut out = a.clone();
    for (o, v) in out.data_mut().iter_mut().zip(b.data().iter()) {
        *o += *v;
    }
    out
}

pub fn concat_forward<T: Scalar>(inputs: &[&Tensor<T>]) -> Tensor<T> {
    let b = inputs[0].batch();
    let (h, w) = (inputs[0].height(), inputs[0].width());
    let channels: usize = inputs.iter().map(|t| t.channels()).sum();
    let mut out = Tensor::zeros(b, channels, h, w);
    for bi in 0..b {
        let mut co = 0usize;
        for t in inputs {
            for ci in 0..t.channels() {
                out.plane_mut(bi, co).copy_from_slice(t.plane(bi, ci));
                co += 1;
            }
        }
    }
    out
}

/// Split the concat gradient back into per-input gradients.
pub fn concat_backward<T: Scalar>(gy: &Tensor<T>, channel_counts: &[usize]) -> Vec<Tensor<T>> {
    let b = gy.batch();
    let (h, w) = (gy.height(), gy.width());
    let mut outs: Vec<Tensor<T>> = channel_counts
        .iter()
        .map(|&c| Tensor::zeros(b, c, h, w))
        .collect();
    for bi in 0..b {
        let mut co = 0usize;
        for t in outs.iter_mut() {
            for ci in 0..t.channels() {
                t.plane_mut(bi, ci).copy_from_slice(gy.plane(bi, co));
                co += 1;
            }
        }
    }
    outs
}

pub fn slice_channels_forward<T: Scalar>(x: &Tensor<T>, start: usize, len: usize) -> Tensor<T> {
    let mut out = Tensor::zeros(x.batch(), len, x.height(), x.width());
    for bi in 0..x.batch() {
        for ci in 0..len {
            out.plane_mut(bi, ci).copy_from_slice(x.plane(bi, start + ci));
        }
    }
    out
}

pub fn slice_channels_backward<T: Scalar>(
    x: &Tensor<T>,
    gy: &Tensor<T>,
    start: usize,
) -> Tensor<T> {
    let mut gx = Tensor::zeros(x.batch(), x.channels(), x.height(), x.width());
    for bi in 0..x.batch() {
        for ci in 0..gy.channels() {
            gx.plane_mut(bi, start + ci).copy_from_slice(gy.plane(bi, ci));
        }
    }
    gx
}

pub fn mse_forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let mut acc = 0.0f64;
    for (x, y) in a.data().iter().zip(b.data().iter()) {
        let d = x.to_f64() - y.to_f64();
        acc += d * d;
    }
    Tensor::scalar(T::from_f64(acc / a.len() as f64))
}

pub fn mse_backward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, g: T) -> (Tensor<T>, Tensor<T>) {
    let scale = g * T::from_f64(2.0 / a.len() as f64);
    let mut ga = a.clone();
    let mut gb = b.clone();
    for i in 0..a.len() {
        let d = (a.data()[i] - b.data()[i]) * scale;
        ga.data_mut()[i] = d;
        gb.data_mut()[i] = -d;
    }
    (ga, gb)
}

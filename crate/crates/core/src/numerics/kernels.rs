//! Pure numeric kernels: forward and backward passes for the differentiable
//! primitives. The autodiff tape wraps these; they stay usable on their own.
//!
//! All convolutions are cross-correlations (no kernel flip) with zero padding
//! and the usual size law `out = floor((in + 2*pad - k) / stride) + 1`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Inclusive output-index range such that `o*stride + k_off - pad` lands in
/// `[0, in_extent)`. Empty ranges come back as `lo > hi`.
#[inline]
fn valid_out_range(
    out_extent: usize,
    stride: usize,
    pad: usize,
    k_off: usize,
    in_extent: usize,
) -> (usize, usize) {
    let s = stride as i64;
    let num_lo = pad as i64 - k_off as i64;
    let lo = num_lo.div_euclid(s) + i64::from(num_lo.rem_euclid(s) != 0);
    let num_hi = in_extent as i64 - 1 + pad as i64 - k_off as i64;
    let hi = num_hi.div_euclid(s);
    let lo = lo.max(0) as usize;
    let hi = hi.min(out_extent as i64 - 1).max(-1) as usize;
    if hi == usize::MAX {
        (1, 0)
    } else {
        (lo, hi)
    }
}

pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if padded < kernel {
        return Err(Error::Shape(format!(
            "conv: kernel {kernel} exceeds padded input extent {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

/// Affine map over the last axis. `x` is treated as rows of length `d_in`;
/// `w` has shape (d_out, d_in).
pub fn linear_forward<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: Option<&Tensor<S>>) -> Tensor<S> {
    let d_in = *x.shape().last().expect("linear: scalar input");
    let (d_out, wd_in) = (w.shape()[0], w.shape()[1]);
    assert_eq!(d_in, wd_in, "linear: input dim {d_in} vs weight dim {wd_in}");
    let rows = x.numel() / d_in;
    let mut out_shape = x.shape().to_vec();
    *out_shape.last_mut().unwrap() = d_out;
    let mut y = Tensor::zeros(&out_shape);
    let xd = x.data();
    let wd = w.data();
    let yd = y.data_mut();
    for r in 0..rows {
        let xr = &xd[r * d_in..(r + 1) * d_in];
        let yr = &mut yd[r * d_out..(r + 1) * d_out];
        for o in 0..d_out {
            let wr = &wd[o * d_in..(o + 1) * d_in];
            yr[o] = dot(xr, wr);
        }
        if let Some(b) = b {
            let bd = b.data();
            for o in 0..d_out {
                yr[o] = yr[o] + bd[o];
            }
        }
    }
    y
}

/// Four-way unrolled dot product: breaks the sequential FP dependency chain
/// so the loop vectorizes. The summation order is fixed, so results stay
/// deterministic run to run.
#[inline]
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (S::zero(), S::zero(), S::zero(), S::zero());
    for c in 0..chunks {
        let i = c * 4;
        s0 = s0 + a[i] * b[i];
        s1 = s1 + a[i + 1] * b[i + 1];
        s2 = s2 + a[i + 2] * b[i + 2];
        s3 = s3 + a[i + 3] * b[i + 3];
    }
    let mut tail = S::zero();
    for i in chunks * 4..n {
        tail = tail + a[i] * b[i];
    }
    ((s0 + s1) + (s2 + s3)) + tail
}

/// Gradients of `linear_forward` w.r.t. (input, weight, bias).
pub fn linear_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    grad: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let d_in = *x.shape().last().unwrap();
    let d_out = w.shape()[0];
    let rows = x.numel() / d_in;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[d_out]);
    let xd = x.data();
    let wd = w.data();
    let gd = grad.data();
    {
        let dxd = dx.data_mut();
        for r in 0..rows {
            let gr = &gd[r * d_out..(r + 1) * d_out];
            let dxr = &mut dxd[r * d_in..(r + 1) * d_in];
            for o in 0..d_out {
                let g = gr[o];
                let wr = &wd[o * d_in..(o + 1) * d_in];
                for i in 0..d_in {
                    dxr[i] = dxr[i] + g * wr[i];
                }
            }
        }
    }
    {
        let dwd = dw.data_mut();
        let dbd = db.data_mut();
        for r in 0..rows {
            let gr = &gd[r * d_out..(r + 1) * d_out];
            let xr = &xd[r * d_in..(r + 1) * d_in];
            for o in 0..d_out {
                let g = gr[o];
                dbd[o] = dbd[o] + g;
                let dwr = &mut dwd[o * d_in..(o + 1) * d_in];
                for i in 0..d_in {
                    dwr[i] = dwr[i] + g * xr[i];
                }
            }
        }
    }
    (dx, dw, db)
}

// ---------------------------------------------------------------------------
// batched 2D convolution (batch axis = frames)
// ---------------------------------------------------------------------------

pub fn conv2d_forward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    b: Option<&Tensor<S>>,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Result<Tensor<S>> {
    let (t, ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, wci, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    if ci != wci {
        return Err(Error::Shape(format!(
            "conv2d: input channels {ci} vs kernel channels {wci}"
        )));
    }
    let oh = conv_out_extent(h, kh, stride.0, pad.0)?;
    let ow = conv_out_extent(wd, kw, stride.1, pad.1)?;
    let mut y = Tensor::zeros(&[t, co, oh, ow]);
    let xd = x.data();
    let wdat = w.data();
    let yd = y.data_mut();
    for bi in 0..t {
        for o in 0..co {
            let y_base = ((bi * co) + o) * oh * ow;
            if let Some(b) = b {
                let bv = b.data()[o];
                for v in &mut yd[y_base..y_base + oh * ow] {
                    *v = bv;
                }
            }
            for c in 0..ci {
                let x_base = ((bi * ci) + c) * h * wd;
                for ky in 0..kh {
                    let (ylo, yhi) = valid_out_range(oh, stride.0, pad.0, ky, h);
                    if ylo > yhi {
                        continue;
                    }
                    for kx in 0..kw {
                        let wv = wdat[(((o * ci) + c) * kh + ky) * kw + kx];
                        if wv == S::zero() {
                            continue;
                        }
                        let (xlo, xhi) = valid_out_range(ow, stride.1, pad.1, kx, wd);
                        if xlo > xhi {
                            continue;
                        }
                        let len = xhi - xlo + 1;
                        for oy in ylo..=yhi {
                            let iy = oy * stride.0 + ky - pad.0;
                            let xrow = x_base + iy * wd;
                            let yrow = y_base + oy * ow;
                            if stride.1 == 1 {
                                // contiguous: vectorizable axpy
                                let ix0 = xrow + xlo + kx - pad.1;
                                let xs = &xd[ix0..ix0 + len];
                                let ys = &mut yd[yrow + xlo..yrow + xlo + len];
                                for i in 0..len {
                                    ys[i] = ys[i] + wv * xs[i];
                                }
                            } else {
                                for ox in xlo..=xhi {
                                    let ix = ox * stride.1 + kx - pad.1;
                                    yd[yrow + ox] = yd[yrow + ox] + wv * xd[xrow + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

pub fn conv2d_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    grad: &Tensor<S>,
    stride: (usize, usize),
    pad: (usize, usize),
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let (t, ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, _, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let (oh, ow) = (grad.shape()[2], grad.shape()[3]);
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[co]);
    let xd = x.data();
    let wdat = w.data();
    let gd = grad.data();
    {
        let dxd = dx.data_mut();
        let dwd = dw.data_mut();
        let dbd = db.data_mut();
        for bi in 0..t {
            for o in 0..co {
                let g_base = ((bi * co) + o) * oh * ow;
                let mut bacc = S::zero();
                for v in &gd[g_base..g_base + oh * ow] {
                    bacc = bacc + *v;
                }
                dbd[o] = dbd[o] + bacc;
                for c in 0..ci {
                    let x_base = ((bi * ci) + c) * h * wd;
                    for ky in 0..kh {
                        let (ylo, yhi) = valid_out_range(oh, stride.0, pad.0, ky, h);
                        if ylo > yhi {
                            continue;
                        }
                        for kx in 0..kw {
                            let widx = (((o * ci) + c) * kh + ky) * kw + kx;
                            let wv = wdat[widx];
                            let (xlo, xhi) = valid_out_range(ow, stride.1, pad.1, kx, wd);
                            if xlo > xhi {
                                continue;
                            }
                            let len = xhi - xlo + 1;
                            let mut wacc = S::zero();
                            for oy in ylo..=yhi {
                                let iy = oy * stride.0 + ky - pad.0;
                                let xrow = x_base + iy * wd;
                                let grow = g_base + oy * ow;
                                if stride.1 == 1 {
                                    let ix0 = xrow + xlo + kx - pad.1;
                                    let gs = &gd[grow + xlo..grow + xlo + len];
                                    let dxs = &mut dxd[ix0..ix0 + len];
                                    for i in 0..len {
                                        dxs[i] = dxs[i] + wv * gs[i];
                                    }
                                    wacc = wacc + dot(gs, &xd[ix0..ix0 + len]);
                                } else {
                                    for ox in xlo..=xhi {
                                        let ix = ox * stride.1 + kx - pad.1;
                                        let g = gd[grow + ox];
                                        dxd[xrow + ix] = dxd[xrow + ix] + wv * g;
                                        wacc = wacc + g * xd[xrow + ix];
                                    }
                                }
                            }
                            dwd[widx] = dwd[widx] + wacc;
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

// ---------------------------------------------------------------------------
// generic 1D / 3D convolutions (single sample, channel-first)
// ---------------------------------------------------------------------------

pub fn conv1d_forward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    b: Option<&Tensor<S>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<S>> {
    let (ci, l) = (x.shape()[0], x.shape()[1]);
    let (co, wci, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    if ci != wci {
        return Err(Error::Shape(format!(
            "conv1d: input channels {ci} vs kernel channels {wci}"
        )));
    }
    let ol = conv_out_extent(l, k, stride, pad)?;
    let mut y = Tensor::zeros(&[co, ol]);
    let xd = x.data();
    let wd = w.data();
    let yd = y.data_mut();
    for o in 0..co {
        if let Some(b) = b {
            let bv = b.data()[o];
            for v in &mut yd[o * ol..(o + 1) * ol] {
                *v = bv;
            }
        }
        for c in 0..ci {
            for d in 0..k {
                let wv = wd[(o * ci + c) * k + d];
                let (lo, hi) = valid_out_range(ol, stride, pad, d, l);
                if lo > hi {
                    continue;
                }
                for op in lo..=hi {
                    let ip = op * stride + d - pad;
                    yd[o * ol + op] = yd[o * ol + op] + wv * xd[c * l + ip];
                }
            }
        }
    }
    Ok(y)
}

pub fn conv1d_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    grad: &Tensor<S>,
    stride: usize,
    pad: usize,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let (ci, l) = (x.shape()[0], x.shape()[1]);
    let (co, _, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let ol = grad.shape()[1];
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[co]);
    let xd = x.data();
    let wd = w.data();
    let gd = grad.data();
    let dxd = dx.data_mut();
    let dwd = dw.data_mut();
    let dbd = db.data_mut();
    for o in 0..co {
        for v in &gd[o * ol..(o + 1) * ol] {
            dbd[o] = dbd[o] + *v;
        }
        for c in 0..ci {
            for d in 0..k {
                let widx = (o * ci + c) * k + d;
                let wv = wd[widx];
                let (lo, hi) = valid_out_range(ol, stride, pad, d, l);
                if lo > hi {
                    continue;
                }
                let mut wacc = S::zero();
                for op in lo..=hi {
                    let ip = op * stride + d - pad;
                    let g = gd[o * ol + op];
                    dxd[c * l + ip] = dxd[c * l + ip] + wv * g;
                    wacc = wacc + g * xd[c * l + ip];
                }
                dwd[widx] = dwd[widx] + wacc;
            }
        }
    }
    (dx, dw, db)
}

pub fn conv3d_forward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    b: Option<&Tensor<S>>,
    stride: (usize, usize, usize),
    pad: (usize, usize, usize),
) -> Result<Tensor<S>> {
    let (ci, d0, d1, d2) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, wci, k0, k1, k2) = (
        w.shape()[0],
        w.shape()[1],
        w.shape()[2],
        w.shape()[3],
        w.shape()[4],
    );
    if ci != wci {
        return Err(Error::Shape(format!(
            "conv3d: input channels {ci} vs kernel channels {wci}"
        )));
    }
    let o0 = conv_out_extent(d0, k0, stride.0, pad.0)?;
    let o1 = conv_out_extent(d1, k1, stride.1, pad.1)?;
    let o2 = conv_out_extent(d2, k2, stride.2, pad.2)?;
    let mut y = Tensor::zeros(&[co, o0, o1, o2]);
    let xd = x.data();
    let wd = w.data();
    let yd = y.data_mut();
    for o in 0..co {
        let y_base = o * o0 * o1 * o2;
        if let Some(b) = b {
            let bv = b.data()[o];
            for v in &mut yd[y_base..y_base + o0 * o1 * o2] {
                *v = bv;
            }
        }
        for c in 0..ci {
            let x_base = c * d0 * d1 * d2;
            for ka in 0..k0 {
                let (alo, ahi) = valid_out_range(o0, stride.0, pad.0, ka, d0);
                if alo > ahi {
                    continue;
                }
                for kb in 0..k1 {
                    let (blo, bhi) = valid_out_range(o1, stride.1, pad.1, kb, d1);
                    if blo > bhi {
                        continue;
                    }
                    for kc in 0..k2 {
                        let wv = wd[((((o * ci) + c) * k0 + ka) * k1 + kb) * k2 + kc];
                        let (clo, chi) = valid_out_range(o2, stride.2, pad.2, kc, d2);
                        if clo > chi {
                            continue;
                        }
                        for oa in alo..=ahi {
                            let ia = oa * stride.0 + ka - pad.0;
                            for ob in blo..=bhi {
                                let ib = ob * stride.1 + kb - pad.1;
                                let yrow = y_base + (oa * o1 + ob) * o2;
                                let xrow = x_base + (ia * d1 + ib) * d2;
                                for oc in clo..=chi {
                                    let ic = oc * stride.2 + kc - pad.2;
                                    yd[yrow + oc] = yd[yrow + oc] + wv * xd[xrow + ic];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

pub fn conv3d_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    grad: &Tensor<S>,
    stride: (usize, usize, usize),
    pad: (usize, usize, usize),
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let (ci, d0, d1, d2) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, k0, k1, k2) = (w.shape()[0], w.shape()[2], w.shape()[3], w.shape()[4]);
    let (o0, o1, o2) = (grad.shape()[1], grad.shape()[2], grad.shape()[3]);
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[co]);
    let xd = x.data();
    let wd = w.data();
    let gd = grad.data();
    let dxd = dx.data_mut();
    let dwd = dw.data_mut();
    let dbd = db.data_mut();
    for o in 0..co {
        let g_base = o * o0 * o1 * o2;
        for v in &gd[g_base..g_base + o0 * o1 * o2] {
            dbd[o] = dbd[o] + *v;
        }
        for c in 0..ci {
            let x_base = c * d0 * d1 * d2;
            for ka in 0..k0 {
                let (alo, ahi) = valid_out_range(o0, stride.0, pad.0, ka, d0);
                if alo > ahi {
                    continue;
                }
                for kb in 0..k1 {
                    let (blo, bhi) = valid_out_range(o1, stride.1, pad.1, kb, d1);
                    if blo > bhi {
                        continue;
                    }
                    for kc in 0..k2 {
                        let widx = ((((o * ci) + c) * k0 + ka) * k1 + kb) * k2 + kc;
                        let wv = wd[widx];
                        let (clo, chi) = valid_out_range(o2, stride.2, pad.2, kc, d2);
                        if clo > chi {
                            continue;
                        }
                        let mut wacc = S::zero();
                        for oa in alo..=ahi {
                            let ia = oa * stride.0 + ka - pad.0;
                            for ob in blo..=bhi {
                                let ib = ob * stride.1 + kb - pad.1;
                                let grow = g_base + (oa * o1 + ob) * o2;
                                let xrow = x_base + (ia * d1 + ib) * d2;
                                for oc in clo..=chi {
                                    let ic = oc * stride.2 + kc - pad.2;
                                    let g = gd[grow + oc];
                                    dxd[xrow + ic] = dxd[xrow + ic] + wv * g;
                                    wacc = wacc + g * xd[xrow + ic];
                                }
                            }
                        }
                        dwd[widx] = dwd[widx] + wacc;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

// ---------------------------------------------------------------------------
// time-axis convolutions over (T, C) feature sequences
// ---------------------------------------------------------------------------

/// 1D convolution over the time axis with same padding (odd kernel).
/// Input (T, C_in), weight (C_out, C_in, k), output (T, C_out).
pub fn conv1d_time_forward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    b: Option<&Tensor<S>>,
) -> Tensor<S> {
    let (t, ci) = (x.shape()[0], x.shape()[1]);
    let (co, wci, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    assert_eq!(ci, wci, "conv1d_time: channel mismatch");
    assert_eq!(k % 2, 1, "conv1d_time: kernel must be odd for same padding");
    let p = k / 2;
    let mut y = Tensor::zeros(&[t, co]);
    let xd = x.data();
    let wd = w.data();
    let yd = y.data_mut();
    for ti in 0..t {
        for o in 0..co {
            let mut acc = b.map(|b| b.data()[o]).unwrap_or_else(S::zero);
            for d in 0..k {
                let src = ti as i64 + d as i64 - p as i64;
                if src < 0 || src >= t as i64 {
                    continue;
                }
                let xr = &xd[src as usize * ci..(src as usize + 1) * ci];
                let wr = &wd[(o * ci) * k + d..];
                for c in 0..ci {
                    acc = acc + xr[c] * wr[c * k];
                }
            }
            yd[ti * co + o] = acc;
        }
    }
    y
}

pub fn conv1d_time_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    grad: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let (t, ci) = (x.shape()[0], x.shape()[1]);
    let (co, _, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let p = k / 2;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[co]);
    let xd = x.data();
    let wd = w.data();
    let gd = grad.data();
    let dxd = dx.data_mut();
    let dwd = dw.data_mut();
    let dbd = db.data_mut();
    for ti in 0..t {
        for o in 0..co {
            let g = gd[ti * co + o];
            dbd[o] = dbd[o] + g;
            for d in 0..k {
                let src = ti as i64 + d as i64 - p as i64;
                if src < 0 || src >= t as i64 {
                    continue;
                }
                let s = src as usize;
                for c in 0..ci {
                    dxd[s * ci + c] = dxd[s * ci + c] + g * wd[(o * ci + c) * k + d];
                    dwd[(o * ci + c) * k + d] = dwd[(o * ci + c) * k + d] + g * xd[s * ci + c];
                }
            }
        }
    }
    (dx, dw, db)
}

/// Depthwise temporal convolution: input (T, C), weight (C, k), same padding.
pub fn depthwise_conv1d_forward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    b: Option<&Tensor<S>>,
) -> Tensor<S> {
    let (t, c) = (x.shape()[0], x.shape()[1]);
    let (wc, k) = (w.shape()[0], w.shape()[1]);
    assert_eq!(c, wc, "depthwise_conv1d: channel mismatch");
    assert_eq!(k % 2, 1, "depthwise_conv1d: kernel must be odd");
    let p = k / 2;
    let mut y = Tensor::zeros(&[t, c]);
    let xd = x.data();
    let wd = w.data();
    let yd = y.data_mut();
    for ti in 0..t {
        for ch in 0..c {
            let mut acc = b.map(|b| b.data()[ch]).unwrap_or_else(S::zero);
            for d in 0..k {
                let src = ti as i64 + d as i64 - p as i64;
                if src < 0 || src >= t as i64 {
                    continue;
                }
                acc = acc + xd[src as usize * c + ch] * wd[ch * k + d];
            }
            yd[ti * c + ch] = acc;
        }
    }
    y
}

pub fn depthwise_conv1d_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    grad: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let (t, c) = (x.shape()[0], x.shape()[1]);
    let k = w.shape()[1];
    let p = k / 2;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[c]);
    let xd = x.data();
    let wd = w.data();
    let gd = grad.data();
    let dxd = dx.data_mut();
    let dwd = dw.data_mut();
    let dbd = db.data_mut();
    for ti in 0..t {
        for ch in 0..c {
            let g = gd[ti * c + ch];
            dbd[ch] = dbd[ch] + g;
            for d in 0..k {
                let src = ti as i64 + d as i64 - p as i64;
                if src < 0 || src >= t as i64 {
                    continue;
                }
                let s = src as usize;
                dxd[s * c + ch] = dxd[s * c + ch] + g * wd[ch * k + d];
                dwd[ch * k + d] = dwd[ch * k + d] + g * xd[s * c + ch];
            }
        }
    }
    (dx, dw, db)
}

// ---------------------------------------------------------------------------
// log-softmax, layer norms
// ---------------------------------------------------------------------------

/// Numerically stable log-softmax over the last axis.
pub fn log_softmax_forward<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let v = *x.shape().last().expect("log_softmax: scalar input");
    let rows = x.numel() / v;
    let mut y = x.clone();
    let yd = y.data_mut();
    for r in 0..rows {
        let row = &mut yd[r * v..(r + 1) * v];
        let mut m = row[0];
        for &x in row.iter() {
            if x > m {
                m = x;
            }
        }
        let mut sum = S::zero();
        for x in row.iter() {
            sum = sum + (*x - m).exp();
        }
        let lse = m + sum.ln();
        for x in row.iter_mut() {
            *x = *x - lse;
        }
    }
    y
}

pub fn log_softmax_backward<S: Scalar>(y: &Tensor<S>, grad: &Tensor<S>) -> Tensor<S> {
    let v = *y.shape().last().unwrap();
    let rows = y.numel() / v;
    let mut dx = Tensor::zeros(y.shape());
    let yd = y.data();
    let gd = grad.data();
    let dxd = dx.data_mut();
    for r in 0..rows {
        let mut gsum = S::zero();
        for i in r * v..(r + 1) * v {
            gsum = gsum + gd[i];
        }
        for i in r * v..(r + 1) * v {
            dxd[i] = gd[i] - yd[i].exp() * gsum;
        }
    }
    dx
}

/// Statistics never cross rows: each row of length F is normalized on its
/// own, then scaled/shifted by the per-feature affine parameters.
pub fn layernorm_rows_forward<S: Scalar>(
    x: &Tensor<S>,
    gain: &Tensor<S>,
    bias: &Tensor<S>,
    eps: f64,
) -> Tensor<S> {
    let f = *x.shape().last().expect("layernorm: scalar input");
    let rows = x.numel() / f;
    let eps = S::from_f(eps);
    let nf = S::from_f(f as f64);
    let mut y = Tensor::zeros(x.shape());
    let xd = x.data();
    let gd = gain.data();
    let bd = bias.data();
    let yd = y.data_mut();
    for r in 0..rows {
        let xr = &xd[r * f..(r + 1) * f];
        let mut mean = S::zero();
        for &v in xr {
            mean = mean + v;
        }
        mean = mean / nf;
        let mut var = S::zero();
        for &v in xr {
            var = var + (v - mean) * (v - mean);
        }
        var = var / nf;
        let inv = (var + eps).sqrt().recip();
        let yr = &mut yd[r * f..(r + 1) * f];
        for i in 0..f {
            yr[i] = (xr[i] - mean) * inv * gd[i] + bd[i];
        }
    }
    y
}

pub fn layernorm_rows_backward<S: Scalar>(
    x: &Tensor<S>,
    gain: &Tensor<S>,
    grad: &Tensor<S>,
    eps: f64,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let f = *x.shape().last().unwrap();
    let rows = x.numel() / f;
    let eps = S::from_f(eps);
    let nf = S::from_f(f as f64);
    let mut dx = Tensor::zeros(x.shape());
    let mut dgain = Tensor::zeros(gain.shape());
    let mut dbias = Tensor::zeros(gain.shape());
    let xd = x.data();
    let gd = gain.data();
    let grd = grad.data();
    let dxd = dx.data_mut();
    let dgd = dgain.data_mut();
    let dbd = dbias.data_mut();
    for r in 0..rows {
        let xr = &xd[r * f..(r + 1) * f];
        let gr = &grd[r * f..(r + 1) * f];
        let mut mean = S::zero();
        for &v in xr {
            mean = mean + v;
        }
        mean = mean / nf;
        let mut var = S::zero();
        for &v in xr {
            var = var + (v - mean) * (v - mean);
        }
        var = var / nf;
        let inv = (var + eps).sqrt().recip();
        // accumulate affine grads and the two reduction terms
        let mut sum_dxhat = S::zero();
        let mut sum_dxhat_xhat = S::zero();
        for i in 0..f {
            let xhat = (xr[i] - mean) * inv;
            dgd[i] = dgd[i] + gr[i] * xhat;
            dbd[i] = dbd[i] + gr[i];
            let dxhat = gr[i] * gd[i];
            sum_dxhat = sum_dxhat + dxhat;
            sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xhat;
        }
        let dxr = &mut dxd[r * f..(r + 1) * f];
        for i in 0..f {
            let xhat = (xr[i] - mean) * inv;
            let dxhat = gr[i] * gd[i];
            dxr[i] = inv * (dxhat - sum_dxhat / nf - xhat * sum_dxhat_xhat / nf);
        }
    }
    (dx, dgain, dbias)
}

/// Frame norm for image activations: statistics per frame over (C, H, W),
/// affine per channel. Input (T, C, H, W), gain/bias (C).
pub fn frame_norm_forward<S: Scalar>(
    x: &Tensor<S>,
    gain: &Tensor<S>,
    bias: &Tensor<S>,
    eps: f64,
) -> Tensor<S> {
    let (t, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let sz = c * h * w;
    let eps = S::from_f(eps);
    let n = S::from_f(sz as f64);
    let mut y = Tensor::zeros(x.shape());
    let xd = x.data();
    let gd = gain.data();
    let bd = bias.data();
    let yd = y.data_mut();
    for ti in 0..t {
        let xr = &xd[ti * sz..(ti + 1) * sz];
        let mut mean = S::zero();
        for &v in xr {
            mean = mean + v;
        }
        mean = mean / n;
        let mut var = S::zero();
        for &v in xr {
            var = var + (v - mean) * (v - mean);
        }
        var = var / n;
        let inv = (var + eps).sqrt().recip();
        let yr = &mut yd[ti * sz..(ti + 1) * sz];
        for ch in 0..c {
            let (g, b) = (gd[ch], bd[ch]);
            for i in ch * h * w..(ch + 1) * h * w {
                yr[i] = (xr[i] - mean) * inv * g + b;
            }
        }
    }
    y
}

pub fn frame_norm_backward<S: Scalar>(
    x: &Tensor<S>,
    gain: &Tensor<S>,
    grad: &Tensor<S>,
    eps: f64,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let (t, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let hw = h * w;
    let sz = c * hw;
    let eps = S::from_f(eps);
    let n = S::from_f(sz as f64);
    let mut dx = Tensor::zeros(x.shape());
    let mut dgain = Tensor::zeros(gain.shape());
    let mut dbias = Tensor::zeros(gain.shape());
    let xd = x.data();
    let gd = gain.data();
    let grd = grad.data();
    let dxd = dx.data_mut();
    let dgd = dgain.data_mut();
    let dbd = dbias.data_mut();
    for ti in 0..t {
        let xr = &xd[ti * sz..(ti + 1) * sz];
        let gr = &grd[ti * sz..(ti + 1) * sz];
        let mut mean = S::zero();
        for &v in xr {
            mean = mean + v;
        }
        mean = mean / n;
        let mut var = S::zero();
        for &v in xr {
            var = var + (v - mean) * (v - mean);
        }
        var = var / n;
        let inv = (var + eps).sqrt().recip();
        let mut sum_dxhat = S::zero();
        let mut sum_dxhat_xhat = S::zero();
        for ch in 0..c {
            let g = gd[ch];
            for i in ch * hw..(ch + 1) * hw {
                let xhat = (xr[i] - mean) * inv;
                dgd[ch] = dgd[ch] + gr[i] * xhat;
                dbd[ch] = dbd[ch] + gr[i];
                let dxhat = gr[i] * g;
                sum_dxhat = sum_dxhat + dxhat;
                sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xhat;
            }
        }
        let dxr = &mut dxd[ti * sz..(ti + 1) * sz];
        for ch in 0..c {
            let g = gd[ch];
            for i in ch * hw..(ch + 1) * hw {
                let xhat = (xr[i] - mean) * inv;
                let dxhat = gr[i] * g;
                dxr[i] = inv * (dxhat - sum_dxhat / n - xhat * sum_dxhat_xhat / n);
            }
        }
    }
    (dx, dgain, dbias)
}

// ---------------------------------------------------------------------------
// temporal shift
// ---------------------------------------------------------------------------

/// Shift the first `n_fwd` channels forward in time (frame t receives frame
/// t-1, frame 0 receives zeros) and the next `n_bwd` channels backward
/// (frame t receives t+1, the last frame receives zeros). Remaining channels
/// pass through. `adjoint` applies the transposed map, which is the same
/// shift with the two directions exchanged.
pub fn temporal_shift_kernel<S: Scalar>(
    x: &Tensor<S>,
    n_fwd: usize,
    n_bwd: usize,
    adjoint: bool,
) -> Tensor<S> {
    let (t, c) = (x.shape()[0], x.shape()[1]);
    let per_ch: usize = x.shape()[2..].iter().product();
    assert!(n_fwd + n_bwd <= c, "temporal_shift: shifted channels exceed C");
    let mut y = Tensor::zeros(x.shape());
    let xd = x.data();
    let yd = y.data_mut();
    let (fwd_range, bwd_range) = (0..n_fwd, n_fwd..n_fwd + n_bwd);
    for ti in 0..t {
        for ch in 0..c {
            let dst = (ti * c + ch) * per_ch;
            let from_prev = if adjoint {
                bwd_range.contains(&ch)
            } else {
                fwd_range.contains(&ch)
            };
            let from_next = if adjoint {
                fwd_range.contains(&ch)
            } else {
                bwd_range.contains(&ch)
            };
            let src_t = if from_prev {
                if ti == 0 {
                    continue; // stays zero
                }
                ti - 1
            } else if from_next {
                if ti + 1 == t {
                    continue;
                }
                ti + 1
            } else {
                ti
            };
            let src = (src_t * c + ch) * per_ch;
            yd[dst..dst + per_ch].copy_from_slice(&xd[src..src + per_ch]);
        }
    }
    y
}

// ---------------------------------------------------------------------------
// generic conv dispatch (spec-level operation)
// ---------------------------------------------------------------------------

/// Convolution descriptor: dimensionality, per-dim stride and zero padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub dims: usize,
    pub stride: Vec<usize>,
    pub pad: Vec<usize>,
}

impl ConvSpec {
    pub fn new(dims: usize, stride: Vec<usize>, pad: Vec<usize>) -> Result<Self> {
        if !(1..=3).contains(&dims) {
            return Err(Error::Shape(format!("conv: dims must be 1..=3, got {dims}")));
        }
        if stride.len() != dims || pad.len() != dims {
            return Err(Error::Shape(
                "conv: stride/pad length must match dims".into(),
            ));
        }
        if stride.iter().any(|&s| s == 0) {
            return Err(Error::Shape("conv: zero stride".into()));
        }
        Ok(ConvSpec { dims, stride, pad })
    }
}

/// N-dimensional convolution over a single channel-first sample:
/// input (C_in, s_1..s_d), kernel (C_out, C_in, k_1..k_d).
pub fn conv<S: Scalar>(input: &Tensor<S>, kernel: &Tensor<S>, spec: &ConvSpec) -> Result<Tensor<S>> {
    if input.rank() != spec.dims + 1 || kernel.rank() != spec.dims + 2 {
        return Err(Error::Shape(format!(
            "conv: rank mismatch, input {:?} kernel {:?} for {}D conv",
            input.shape(),
            kernel.shape(),
            spec.dims
        )));
    }
    match spec.dims {
        1 => conv1d_forward(input, kernel, None, spec.stride[0], spec.pad[0]),
        2 => {
            let x = input
                .clone()
                .reshaped(&[1, input.shape()[0], input.shape()[1], input.shape()[2]]);
            let y = conv2d_forward(
                &x,
                kernel,
                None,
                (spec.stride[0], spec.stride[1]),
                (spec.pad[0], spec.pad[1]),
            )?;
            let s = y.shape().to_vec();
            Ok(y.reshaped(&[s[1], s[2], s[3]]))
        }
        3 => conv3d_forward(
            input,
            kernel,
            None,
            (spec.stride[0], spec.stride[1], spec.stride[2]),
            (spec.pad[0], spec.pad[1], spec.pad[2]),
        ),
        _ => unreachable!(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv1d_direct_summation_example() {
        // input [1,2,3], kernel [1,0,-1], stride 1, pad 0 -> [-2]
        let x = Tensor::from_vec(&[1, 3], vec![1.0f64, 2.0, 3.0]);
        let k = Tensor::from_vec(&[1, 1, 3], vec![1.0f64, 0.0, -1.0]);
        let spec = ConvSpec::new(1, vec![1], vec![0]).unwrap();
        let y = conv(&x, &k, &spec).unwrap();
        assert_eq!(y.shape(), &[1, 1]);
        assert_eq!(y.data()[0], -2.0);
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::from_vec(&[1, 2, 3], (0..6).map(|i| i as f64).collect());
        let k = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0f64]);
        let spec = ConvSpec::new(2, vec![1, 1], vec![0, 0]).unwrap();
        let y = conv(&x, &k, &spec).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv3d_size_formula_32_to_10() {
        // extent 32 along one axis, kernel 5, stride 3, pad 0 -> extent 10
        assert_eq!(conv_out_extent(32, 5, 3, 0).unwrap(), 10);
        let x = Tensor::<f64>::zeros(&[1, 32, 2, 3]);
        let k = Tensor::<f64>::zeros(&[1, 1, 5, 1, 1]);
        let spec = ConvSpec::new(3, vec![3, 1, 1], vec![0, 0, 0]).unwrap();
        let y = conv(&x, &k, &spec).unwrap();
        assert_eq!(y.shape(), &[1, 10, 2, 3]);
    }

    #[test]
    fn conv_rejects_non_positive_output() {
        let x = Tensor::<f64>::zeros(&[1, 3]);
        let k = Tensor::<f64>::zeros(&[1, 1, 5]);
        let spec = ConvSpec::new(1, vec![1], vec![0]).unwrap();
        assert!(conv(&x, &k, &spec).is_err());
    }

    #[test]
    fn conv_linearity() {
        // conv(a*x + b*y, k) == a*conv(x,k) + b*conv(y,k)
        let mut rng_state = 12345u64;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((rng_state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        let x = Tensor::from_vec(&[2, 6], (0..12).map(|_| next()).collect());
        let y = Tensor::from_vec(&[2, 6], (0..12).map(|_| next()).collect());
        let k = Tensor::from_vec(&[3, 2, 3], (0..18).map(|_| next()).collect());
        let spec = ConvSpec::new(1, vec![1], vec![1]).unwrap();
        let (a, b) = (1.7, -0.3);
        let mixed = Tensor::zip(&x, &y, |u, v| a * u + b * v);
        let lhs = conv(&mixed, &k, &spec).unwrap();
        let cx = conv(&x, &k, &spec).unwrap();
        let cy = conv(&y, &k, &spec).unwrap();
        let rhs = Tensor::zip(&cx, &cy, |u, v| a * u + b * v);
        assert!(Tensor::max_abs_diff(&lhs, &rhs) < 1e-10);
    }

    #[test]
    fn log_softmax_examples() {
        // [0,0] -> [ln .5, ln .5]; huge inputs do not overflow; [1,0] oracle
        let y = log_softmax_forward(&Tensor::from_vec(&[2], vec![0.0f64, 0.0]));
        assert!((y.data()[0] - 0.5f64.ln()).abs() < 1e-12);
        let y = log_softmax_forward(&Tensor::from_vec(&[2], vec![1000.0f64, 1000.0]));
        assert!((y.data()[0] - 0.5f64.ln()).abs() < 1e-12);
        let y = log_softmax_forward(&Tensor::from_vec(&[2], vec![1.0f64, 0.0]));
        assert!((y.data()[0] - (-0.3133)).abs() < 1e-4);
        assert!((y.data()[1] - (-1.3133)).abs() < 1e-4);
    }

    #[test]
    fn log_softmax_rows_normalize_and_shift_invariant() {
        let x = Tensor::from_vec(&[2, 3], vec![0.3f64, -1.2, 2.0, 5.0, 5.5, 4.7]);
        let y = log_softmax_forward(&x);
        for r in 0..2 {
            let s: f64 = y.data()[r * 3..(r + 1) * 3].iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        let shifted = x.map(|v| v + 123.456);
        let y2 = log_softmax_forward(&shifted);
        assert!(Tensor::max_abs_diff(&y, &y2) < 1e-9);
    }

    #[test]
    fn linear_examples() {
        // identity weights, zero bias
        let x = Tensor::from_vec(&[2], vec![3.0f64, -4.0]);
        let w = Tensor::from_vec(&[2, 2], vec![1.0f64, 0.0, 0.0, 1.0]);
        let y = linear_forward(&x, &w, None);
        assert_eq!(y.data(), x.data());
        // [1,1] x [[2,0],[0,3]] + [1,1] = [3,4]
        let x = Tensor::from_vec(&[2], vec![1.0f64, 1.0]);
        let w = Tensor::from_vec(&[2, 2], vec![2.0f64, 0.0, 0.0, 3.0]);
        let b = Tensor::from_vec(&[2], vec![1.0f64, 1.0]);
        let y = linear_forward(&x, &w, Some(&b));
        assert_eq!(y.data(), &[3.0, 4.0]);
        // zero input -> bias broadcast
        let x = Tensor::from_vec(&[2, 2], vec![0.0f64; 4]);
        let y = linear_forward(&x, &w, Some(&b));
        assert_eq!(y.data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn temporal_shift_hand_oracle() {
        // T=3, C=4, fraction 1/4 each way: channel 0 forward, channel 1 backward.
        // values f(t, c) = 10t + c
        let data: Vec<f64> = (0..3)
            .flat_map(|t| (0..4).map(move |c| (10 * t + c) as f64))
            .collect();
        let x = Tensor::from_vec(&[3, 4, 1, 1], data);
        let y = temporal_shift_kernel(&x, 1, 1, false);
        let get = |t: usize, c: usize| y.data()[t * 4 + c];
        assert_eq!([get(0, 0), get(1, 0), get(2, 0)], [0.0, 0.0, 10.0]);
        assert_eq!([get(0, 1), get(1, 1), get(2, 1)], [11.0, 21.0, 0.0]);
        for c in 2..4 {
            for t in 0..3 {
                assert_eq!(get(t, c), (10 * t + c) as f64);
            }
        }
    }

    #[test]
    fn temporal_shift_fraction_zero_is_identity() {
        let x = Tensor::from_vec(&[2, 3, 1, 1], (0..6).map(|i| i as f64).collect());
        let y = temporal_shift_kernel(&x, 0, 0, false);
        assert_eq!(x, y);
    }

    #[test]
    fn temporal_shift_single_frame_zeroes_shifted_channels() {
        let x = Tensor::from_vec(&[1, 4, 1, 1], vec![1.0f64, 2.0, 3.0, 4.0]);
        let y = temporal_shift_kernel(&x, 1, 1, false);
        assert_eq!(y.data(), &[0.0, 0.0, 3.0, 4.0]);
    }

    #[test]
    fn temporal_shift_adjoint_is_transpose() {
        // <shift(x), y> == <x, shift_adjoint(y)> for the linear map
        let x = Tensor::from_vec(&[4, 4, 1, 1], (0..16).map(|i| (i as f64).sin()).collect());
        let y = Tensor::from_vec(&[4, 4, 1, 1], (0..16).map(|i| (i as f64).cos()).collect());
        let sx = temporal_shift_kernel(&x, 1, 1, false);
        let sty = temporal_shift_kernel(&y, 1, 1, true);
        let dot = |a: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
            a.data().iter().zip(b.data()).map(|(u, v)| u * v).sum()
        };
        assert!((dot(&sx, &y) - dot(&x, &sty)).abs() < 1e-12);
    }
}

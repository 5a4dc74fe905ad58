//! Convolutions over `[H, W, C]` images: full k×k, depthwise k×k and
//! pointwise 1×1, each with its backward pass.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding so the output is `ceil(extent / stride)`. Odd totals put
    /// the extra pixel on the bottom/right.
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

fn axis(extent: usize, k: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = extent.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(extent);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if extent < k {
                return Err(Error::InvalidArgument(format!(
                    "valid conv: extent {extent} smaller than kernel {k}"
                )));
            }
            Ok(((extent - k) / stride + 1, 0))
        }
    }
}

pub fn geometry(h: usize, w: usize, k: usize, stride: usize, padding: Padding) -> Result<Geometry> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("kernel side {k} must be odd")));
    }
    if stride != 1 && stride != 2 {
        return Err(Error::InvalidArgument(format!("stride {stride} not in {{1, 2}}")));
    }
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument("empty spatial extent".into()));
    }
    let (out_h, pad_top) = axis(h, k, stride, padding)?;
    let (out_w, pad_left) = axis(w, k, stride, padding)?;
    Ok(Geometry {
        out_h,
        out_w,
        pad_top,
        pad_left,
    })
}

fn hwc(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(Error::InvalidArgument(format!(
            "{op}: expected [H, W, C] input, got {:?}",
            t.shape()
        ))),
    }
}

/// Source row/column for an output coordinate and kernel tap, if inside.
#[inline]
fn src(o: usize, tap: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
    let i = (o * stride + tap).checked_sub(pad)?;
    (i < extent).then_some(i)
}

/// One `k×k` filter per channel; `kernels` is `[k, k, C]`.
pub fn depthwise_conv(input: &Tensor, kernels: &Tensor, stride: usize, padding: Padding) -> Result<Tensor> {
    let (h, w, c) = hwc(input, "depthwise_conv")?;
    let k = match *kernels.shape() {
        [k1, k2, kc] if k1 == k2 && kc == c => k1,
        _ => return Err(Error::shape("depthwise_conv", input.shape(), kernels.shape())),
    };
    let g = geometry(h, w, k, stride, padding)?;
    let x = input.data();
    let kd = kernels.data();
    let mut out = vec![0.0; g.out_h * g.out_w * c];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let o = &mut out[(oy * g.out_w + ox) * c..][..c];
            for ky in 0..k {
                let Some(iy) = src(oy, ky, stride, g.pad_top, h) else { continue };
                for kx in 0..k {
                    let Some(ix) = src(ox, kx, stride, g.pad_left, w) else { continue };
                    let xi = &x[(iy * w + ix) * c..][..c];
                    let ki = &kd[(ky * k + kx) * c..][..c];
                    for ((o, &a), &b) in o.iter_mut().zip(xi).zip(ki) {
                        *o += a * b;
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.out_h, g.out_w, c], out)
}

/// Returns `(∂L/∂input, ∂L/∂kernels)`.
pub fn depthwise_conv_backward(
    input: &Tensor,
    kernels: &Tensor,
    stride: usize,
    padding: Padding,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (h, w, c) = hwc(input, "depthwise_conv_backward")?;
    let k = kernels.shape()[0];
    let g = geometry(h, w, k, stride, padding)?;
    if grad_out.shape() != [g.out_h, g.out_w, c] {
        return Err(Error::shape("depthwise_conv_backward", grad_out.shape(), &[g.out_h, g.out_w, c]));
    }
    let x = input.data();
    let kd = kernels.data();
    let go = grad_out.data();
    let mut dx = vec![0.0; x.len()];
    let mut dk = vec![0.0; kd.len()];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let gi = &go[(oy * g.out_w + ox) * c..][..c];
            for ky in 0..k {
                let Some(iy) = src(oy, ky, stride, g.pad_top, h) else { continue };
                for kx in 0..k {
                    let Some(ix) = src(ox, kx, stride, g.pad_left, w) else { continue };
                    let base = (iy * w + ix) * c;
                    let kbase = (ky * k + kx) * c;
                    for ch in 0..c {
                        dx[base + ch] += gi[ch] * kd[kbase + ch];
                        dk[kbase + ch] += gi[ch] * x[base + ch];
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), dx)?,
        Tensor::new(kernels.shape().to_vec(), dk)?,
    ))
}

/// Per-pixel `weightsᵀ · x` with `weights: [C_in, C_out]`.
pub fn pointwise_conv(input: &Tensor, weights: &Tensor) -> Result<Tensor> {
    let (h, w, c_in) = hwc(input, "pointwise_conv")?;
    let c_out = match *weights.shape() {
        [r, co] if r == c_in => co,
        _ => return Err(Error::shape("pointwise_conv", input.shape(), weights.shape())),
    };
    let x = input.data();
    let wd = weights.data();
    let mut out = vec![0.0; h * w * c_out];
    for (xi, o) in x.chunks_exact(c_in).zip(out.chunks_exact_mut(c_out)) {
        for (ci, &a) in xi.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (o, &b) in o.iter_mut().zip(&wd[ci * c_out..(ci + 1) * c_out]) {
                *o += a * b;
            }
        }
    }
    Tensor::new(vec![h, w, c_out], out)
}

pub fn pointwise_conv_backward(input: &Tensor, weights: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let (h, w, c_in) = hwc(input, "pointwise_conv_backward")?;
    let c_out = weights.shape()[1];
    if grad_out.shape() != [h, w, c_out] {
        return Err(Error::shape("pointwise_conv_backward", grad_out.shape(), &[h, w, c_out]));
    }
    let x = input.data();
    let wd = weights.data();
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; wd.len()];
    for ((xi, gi), dxi) in x
        .chunks_exact(c_in)
        .zip(grad_out.data().chunks_exact(c_out))
        .zip(dx.chunks_exact_mut(c_in))
    {
        for ci in 0..c_in {
            let row = &wd[ci * c_out..(ci + 1) * c_out];
            dxi[ci] = row.iter().zip(gi).map(|(a, b)| a * b).sum();
            let a = xi[ci];
            if a != 0.0 {
                for (d, &g) in dw[ci * c_out..(ci + 1) * c_out].iter_mut().zip(gi) {
                    *d += a * g;
                }
            }
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), dx)?,
        Tensor::new(weights.shape().to_vec(), dw)?,
    ))
}

/// Dense `k×k` convolution, `kernels: [k, k, C_in, C_out]`. Used for the stem.
pub fn conv2d(input: &Tensor, kernels: &Tensor, stride: usize, padding: Padding) -> Result<Tensor> {
    let (h, w, c_in) = hwc(input, "conv2d")?;
    let (k, c_out) = match *kernels.shape() {
        [k1, k2, ci, co] if k1 == k2 && ci == c_in => (k1, co),
        _ => return Err(Error::shape("conv2d", input.shape(), kernels.shape())),
    };
    let g = geometry(h, w, k, stride, padding)?;
    let x = input.data();
    let kd = kernels.data();
    let mut out = vec![0.0; g.out_h * g.out_w * c_out];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let o = &mut out[(oy * g.out_w + ox) * c_out..][..c_out];
            for ky in 0..k {
                let Some(iy) = src(oy, ky, stride, g.pad_top, h) else { continue };
                for kx in 0..k {
                    let Some(ix) = src(ox, kx, stride, g.pad_left, w) else { continue };
                    let xi = &x[(iy * w + ix) * c_in..][..c_in];
                    let tap = &kd[(ky * k + kx) * c_in * c_out..][..c_in * c_out];
                    for (ci, &a) in xi.iter().enumerate() {
                        for (o, &b) in o.iter_mut().zip(&tap[ci * c_out..(ci + 1) * c_out]) {
                            *o += a * b;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.out_h, g.out_w, c_out], out)
}

pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    stride: usize,
    padding: Padding,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (h, w, c_in) = hwc(input, "conv2d_backward")?;
    let k = kernels.shape()[0];
    let c_out = kernels.shape()[3];
    let g = geometry(h, w, k, stride, padding)?;
    if grad_out.shape() != [g.out_h, g.out_w, c_out] {
        return Err(Error::shape("conv2d_backward", grad_out.shape(), &[g.out_h, g.out_w, c_out]));
    }
    let x = input.data();
    let kd = kernels.data();
    let go = grad_out.data();
    let mut dx = vec![0.0; x.len()];
    let mut dk = vec![0.0; kd.len()];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let gi = &go[(oy * g.out_w + ox) * c_out..][..c_out];
            for ky in 0..k {
                let Some(iy) = src(oy, ky, stride, g.pad_top, h) else { continue };
                for kx in 0..k {
                    let Some(ix) = src(ox, kx, stride, g.pad_left, w) else { continue };
                    let base = (iy * w + ix) * c_in;
                    let tap = (ky * k + kx) * c_in * c_out;
                    for ci in 0..c_in {
                        let row = tap + ci * c_out;
                        let a = x[base + ci];
                        let mut acc = 0.0;
                        for co in 0..c_out {
                            acc += gi[co] * kd[row + co];
                            dk[row + co] += a * gi[co];
                        }
                        dx[base + ci] += acc;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), dx)?,
        Tensor::new(kernels.shape().to_vec(), dk)?,
    ))
}

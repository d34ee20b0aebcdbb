//! Direct 2-D convolution kernels (cross-correlation, zero padding).

use crate::error::CoreError;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: usize,
    pub pad: usize,
}

impl ConvParams {
    pub const fn same(kernel: usize) -> Self {
        ConvParams { stride: 1, pad: kernel / 2 }
    }
}

/// Output size of one spatial dimension.
pub fn output_dim(size: usize, kernel: usize, p: ConvParams) -> Option<usize> {
    let padded = size + 2 * p.pad;
    if p.stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / p.stride + 1)
}

/// Validates operand shapes and returns the output shape.
pub fn output_shape(input: Shape, weight: Shape, bias_len: usize, p: ConvParams) -> Result<Shape, CoreError> {
    let (oc, ic, kh, kw) = (weight.n, weight.c, weight.h, weight.w);
    if input.c != ic {
        return Err(CoreError::DimMismatch { op: "conv2d", dim: "input channels", expected: ic, actual: input.c });
    }
    if bias_len != oc {
        return Err(CoreError::DimMismatch { op: "conv2d", dim: "bias length", expected: oc, actual: bias_len });
    }
    if kh % 2 == 0 {
        return Err(CoreError::DimMismatch { op: "conv2d", dim: "kernel height (must be odd)", expected: kh + 1, actual: kh });
    }
    if kw % 2 == 0 {
        return Err(CoreError::DimMismatch { op: "conv2d", dim: "kernel width (must be odd)", expected: kw + 1, actual: kw });
    }
    if p.stride == 0 {
        return Err(CoreError::InvalidArgument("conv2d: stride must be at least 1"));
    }
    let oh = output_dim(input.h, kh, p).ok_or(CoreError::DimMismatch {
        op: "conv2d",
        dim: "padded input height",
        expected: kh,
        actual: input.h + 2 * p.pad,
    })?;
    let ow = output_dim(input.w, kw, p).ok_or(CoreError::DimMismatch {
        op: "conv2d",
        dim: "padded input width",
        expected: kw,
        actual: input.w + 2 * p.pad,
    })?;
    Ok(Shape::new(input.n, oc, oh, ow))
}

/// Range of output columns whose input column `ox*stride + k - pad` lies in `[0, size)`.
#[inline]
fn valid_range(out: usize, size: usize, k: usize, p: ConvParams) -> (usize, usize) {
    let lo = if p.pad > k { (p.pad - k).div_ceil(p.stride) } else { 0 };
    // largest ox with ox*stride + k - pad <= size - 1
    let top = size + p.pad;
    let hi = if top > k { ((top - 1 - k) / p.stride + 1).min(out) } else { 0 };
    (lo, hi.max(lo))
}

pub fn forward(input: &Tensor, weight: &Tensor, bias: &Tensor, p: ConvParams) -> Result<Tensor, CoreError> {
    let is = input.shape();
    let ws = weight.shape();
    let os = output_shape(is, ws, bias.len(), p)?;
    let mut out = Tensor::zeros(os);
    let (kh, kw) = (ws.h, ws.w);
    let x = input.data();
    let wt = weight.data();
    let o = out.data_mut();
    for n in 0..is.n {
        for co in 0..ws.n {
            let obase = os.index(n, co, 0, 0);
            let plane = &mut o[obase..obase + os.plane()];
            plane.fill(bias.data()[co]);
            for ci in 0..is.c {
                let ibase = is.index(n, ci, 0, 0);
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = valid_range(os.h, is.h, ky, p);
                    for kx in 0..kw {
                        let wv = wt[ws.index(co, ci, ky, kx)];
                        let (ox_lo, ox_hi) = valid_range(os.w, is.w, kx, p);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * p.stride + ky - p.pad;
                            let orow = &mut plane[oy * os.w..(oy + 1) * os.w];
                            let irow = &x[ibase + iy * is.w..ibase + (iy + 1) * is.w];
                            if p.stride == 1 {
                                let off = ox_lo + kx - p.pad;
                                let len = ox_hi - ox_lo;
                                for (ov, iv) in orow[ox_lo..ox_hi].iter_mut().zip(&irow[off..off + len]) {
                                    *ov += wv * iv;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    orow[ox] += wv * irow[ox * p.stride + kx - p.pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a convolution given the upstream gradient of its output.
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
}

pub fn backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    p: ConvParams,
    need_input: bool,
    need_params: bool,
) -> ConvGrads {
    let is = input.shape();
    let ws = weight.shape();
    let os = grad_out.shape();
    let (kh, kw) = (ws.h, ws.w);
    let x = input.data();
    let wt = weight.data();
    let go = grad_out.data();

    let mut gin = need_input.then(|| Tensor::zeros(is));
    let mut gw = need_params.then(|| Tensor::zeros(ws));
    let mut gb = need_params.then(|| Tensor::zeros(Shape::new(1, ws.n, 1, 1)));

    for n in 0..is.n {
        for co in 0..ws.n {
            let obase = os.index(n, co, 0, 0);
            let gplane = &go[obase..obase + os.plane()];
            if let Some(gb) = gb.as_mut() {
                gb.data_mut()[co] += gplane.iter().map(|&v| v as f64).sum::<f64>() as f32;
            }
            for ci in 0..is.c {
                let ibase = is.index(n, ci, 0, 0);
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = valid_range(os.h, is.h, ky, p);
                    for kx in 0..kw {
                        let widx = ws.index(co, ci, ky, kx);
                        let wv = wt[widx];
                        let (ox_lo, ox_hi) = valid_range(os.w, is.w, kx, p);
                        let mut acc = 0.0f64;
                        for oy in oy_lo..oy_hi {
                            let iy = oy * p.stride + ky - p.pad;
                            let grow = &gplane[oy * os.w..(oy + 1) * os.w];
                            let irange = ibase + iy * is.w..ibase + (iy + 1) * is.w;
                            if p.stride == 1 {
                                let off = ox_lo + kx - p.pad;
                                let len = ox_hi - ox_lo;
                                if gw.is_some() {
                                    let irow = &x[irange.clone()];
                                    let mut row = 0.0f32;
                                    for (g, iv) in grow[ox_lo..ox_hi].iter().zip(&irow[off..off + len]) {
                                        row += g * iv;
                                    }
                                    acc += row as f64;
                                }
                                if let Some(gin) = gin.as_mut() {
                                    let irow = &mut gin.data_mut()[irange];
                                    for (iv, g) in irow[off..off + len].iter_mut().zip(&grow[ox_lo..ox_hi]) {
                                        *iv += wv * g;
                                    }
                                }
                            } else {
                                if gw.is_some() {
                                    let irow = &x[irange.clone()];
                                    let mut row = 0.0f32;
                                    for ox in ox_lo..ox_hi {
                                        row += grow[ox] * irow[ox * p.stride + kx - p.pad];
                                    }
                                    acc += row as f64;
                                }
                                if let Some(gin) = gin.as_mut() {
                                    let irow = &mut gin.data_mut()[irange];
                                    for ox in ox_lo..ox_hi {
                                        irow[ox * p.stride + kx - p.pad] += wv * grow[ox];
                                    }
                                }
                            }
                        }
                        if let Some(gw) = gw.as_mut() {
                            gw.data_mut()[widx] += acc as f32;
                        }
                    }
                }
            }
        }
    }
    ConvGrads { input: gin, weight: gw, bias: gb }
}

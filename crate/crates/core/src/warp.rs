//! Backward bilinear warping: `out(p) = source(p + flow(p))`.
//!
//! Pixel `i` sits at coordinate `i` (pixel-centre alignment). Sample
//! coordinates outside `[0, size - 1]` are clamped to the border.

use alloc::vec::Vec;

use crate::error::CoreError;
use crate::flow::FlowField;
use crate::math;
use crate::tensor::{Shape, Tensor};

/// Precomputed taps for one flow field: four plane offsets and weights per pixel.
#[derive(Clone, Debug)]
pub struct WarpTable {
    width: usize,
    height: usize,
    taps: Vec<([u32; 4], [f32; 4])>,
}

impl WarpTable {
    pub fn new(flow: &FlowField) -> Self {
        let (w, h) = (flow.width(), flow.height());
        let mut taps = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let (u, v) = flow.at(x, y);
                let sx = (x as f32 + u).clamp(0.0, (w - 1) as f32);
                let sy = (y as f32 + v).clamp(0.0, (h - 1) as f32);
                let x0 = math::floor(sx);
                let y0 = math::floor(sy);
                let fx = sx - x0;
                let fy = sy - y0;
                let (x0, y0) = (x0 as usize, y0 as usize);
                let x1 = (x0 + 1).min(w - 1);
                let y1 = (y0 + 1).min(h - 1);
                let idx = [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1].map(|i| i as u32);
                let wts = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
                taps.push((idx, wts));
            }
        }
        WarpTable { width: w, height: h, taps }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

/// `(1, 1, h, w)` mask that is 1 where `p + flow(p)` lies inside the frame
/// (no clamping needed) and 0 elsewhere.
pub fn in_range_mask(flow: &FlowField) -> Tensor {
    let (w, h) = (flow.width(), flow.height());
    Tensor::from_fn(Shape::new(1, 1, h, w), |_, _, y, x| {
        let (u, v) = flow.at(x, y);
        let (sx, sy) = (x as f32 + u, y as f32 + v);
        let inside = sx >= 0.0 && sx <= (w - 1) as f32 && sy >= 0.0 && sy <= (h - 1) as f32;
        if inside { 1.0 } else { 0.0 }
    })
}

/// Checks that `tables` can warp a source of shape `s`: one table per image, or one shared.
pub fn check_tables(s: Shape, tables: &[WarpTable]) -> Result<(), CoreError> {
    if tables.len() != s.n && tables.len() != 1 {
        return Err(CoreError::DimMismatch { op: "bilinear_warp", dim: "flow count", expected: s.n, actual: tables.len() });
    }
    for t in tables {
        if t.width != s.w {
            return Err(CoreError::DimMismatch { op: "bilinear_warp", dim: "flow width", expected: s.w, actual: t.width });
        }
        if t.height != s.h {
            return Err(CoreError::DimMismatch { op: "bilinear_warp", dim: "flow height", expected: s.h, actual: t.height });
        }
    }
    Ok(())
}

fn table_for(tables: &[WarpTable], n: usize) -> &WarpTable {
    if tables.len() == 1 { &tables[0] } else { &tables[n] }
}

pub fn forward(source: &Tensor, tables: &[WarpTable]) -> Result<Tensor, CoreError> {
    let s = source.shape();
    check_tables(s, tables)?;
    let mut out = Tensor::zeros(s);
    let plane = s.plane();
    for n in 0..s.n {
        let table = table_for(tables, n);
        for c in 0..s.c {
            let base = s.index(n, c, 0, 0);
            let src = &source.data()[base..base + plane];
            let dst = &mut out.data_mut()[base..base + plane];
            for (d, (idx, wts)) in dst.iter_mut().zip(&table.taps) {
                // zero-weight taps are skipped so integer flow copies bits exactly
                let mut acc = src[idx[0] as usize] * wts[0];
                for k in 1..4 {
                    if wts[k] != 0.0 {
                        acc += src[idx[k] as usize] * wts[k];
                    }
                }
                *d = acc;
            }
        }
    }
    Ok(out)
}

/// Gradient with respect to the source; the flow is treated as a constant.
pub fn backward(grad_out: &Tensor, tables: &[WarpTable]) -> Tensor {
    let s = grad_out.shape();
    let mut grad = Tensor::zeros(s);
    let plane = s.plane();
    for n in 0..s.n {
        let table = table_for(tables, n);
        for c in 0..s.c {
            let base = s.index(n, c, 0, 0);
            let g = &grad_out.data()[base..base + plane];
            let dst = &mut grad.data_mut()[base..base + plane];
            for (&gv, (idx, wts)) in g.iter().zip(&table.taps) {
                for k in 0..4 {
                    dst[idx[k] as usize] += gv * wts[k];
                }
            }
        }
    }
    grad
}

//! Fidelity and temporal-consistency metrics.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::flow::{to_luma, FlowField};
use crate::math;
use crate::tape::Tape;
use crate::tensor::{ensure_same_shape, Shape, Tensor};
use crate::tosr::{warp_consistency, WarpBorder};

/// Reported when the two images are identical.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 8;

fn mse64(a: &Tensor, b: &Tensor) -> f64 {
    let s: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| {
        let d = x as f64 - y as f64;
        d * d
    }).sum();
    s / a.len().max(1) as f64
}

pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64, CoreError> {
    ensure_same_shape("psnr", a.shape(), b.shape())?;
    if !(peak > 0.0) {
        return Err(CoreError::InvalidArgument("psnr: peak must be positive"));
    }
    let mse = mse64(a, b);
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * math::log10_64(peak * peak / mse)).min(PSNR_CAP_DB))
}

/// Mean squared error restricted to pixels where `mask` (shape `(n, 1, h, w)`) is nonzero.
/// Errors are averaged over every channel of the kept pixels.
pub fn masked_mse(a: &Tensor, b: &Tensor, mask: &Tensor) -> Result<f64, CoreError> {
    let s = a.shape();
    ensure_same_shape("masked_mse", s, b.shape())?;
    ensure_same_shape("masked_mse", Shape::new(s.n, 1, s.h, s.w), mask.shape())?;
    let (mut sum, mut count) = (0.0f64, 0usize);
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    if mask.at(n, 0, y, x) != 0.0 {
                        let d = a.at(n, c, y, x) as f64 - b.at(n, c, y, x) as f64;
                        sum += d * d;
                        count += 1;
                    }
                }
            }
        }
    }
    if count == 0 {
        return Err(CoreError::Empty("masked_mse: mask selects no pixels"));
    }
    Ok(sum / count as f64)
}

fn ssim_plane(a: &[f32], b: &[f32], w: usize, h: usize, peak: f64) -> f64 {
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);
    let (ww, wh) = (SSIM_WINDOW.min(w), SSIM_WINDOW.min(h));
    let area = (ww * wh) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for y0 in 0..=h - wh {
        for x0 in 0..=w - ww {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0f64, 0.0, 0.0, 0.0, 0.0);
            for y in y0..y0 + wh {
                for x in x0..x0 + ww {
                    let (p, q) = (a[y * w + x] as f64, b[y * w + x] as f64);
                    sa += p;
                    sb += q;
                    saa += p * p;
                    sbb += q * q;
                    sab += p * q;
                }
            }
            let (ma, mb) = (sa / area, sb / area);
            let va = (saa / area - ma * ma).max(0.0);
            let vb = (sbb / area - mb * mb).max(0.0);
            let cov = sab / area - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            windows += 1;
        }
    }
    total / windows as f64
}

/// Mean SSIM over 8x8 uniform windows at stride 1 (the whole image when smaller).
/// Three-channel images are compared on luma; the result is averaged over the batch.
pub fn ssim(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64, CoreError> {
    ensure_same_shape("ssim", a.shape(), b.shape())?;
    if !(peak > 0.0) {
        return Err(CoreError::InvalidArgument("ssim: peak must be positive"));
    }
    let (a, b) = match a.shape().c {
        1 => (a.clone(), b.clone()),
        3 => (to_luma(a)?, to_luma(b)?),
        c => return Err(CoreError::DimMismatch { op: "ssim", dim: "channels (1 or 3)", expected: 1, actual: c }),
    };
    let s = a.shape();
    if s.n == 0 || s.plane() == 0 {
        return Err(CoreError::Empty("ssim"));
    }
    let mut total = 0.0;
    for n in 0..s.n {
        let pa = &a.data()[n * s.plane()..(n + 1) * s.plane()];
        let pb = &b.data()[n * s.plane()..(n + 1) * s.plane()];
        total += ssim_plane(pa, pb, s.w, s.h, peak);
    }
    Ok(total / s.n as f64)
}

/// Stacks pixel row `row` of every frame into a `(1, c, frames, w)` image.
/// Each frame is a `(1, c, h, w)` tensor.
pub fn temporal_profile(frames: &[Tensor], row: usize) -> Result<Tensor, CoreError> {
    let first = frames.first().ok_or(CoreError::Empty("temporal_profile"))?;
    let s = first.shape();
    if row >= s.h {
        return Err(CoreError::OutOfRange { what: "profile row", value: row, limit: s.h });
    }
    for f in frames {
        ensure_same_shape("temporal_profile", s, f.shape())?;
    }
    Ok(Tensor::from_fn(Shape::new(1, s.c, frames.len(), s.w), |_, c, t, x| frames[t].at(0, c, row, x)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct WarpError {
    pub per_pair: Vec<f64>,
    pub mean: f64,
}

/// For each consecutive pair, `m(frame_t, warp(frame_{t+1}, flow_t))`, using
/// the same tape primitives as the warp-SR training term.
pub fn warp_error(frames: &[Tensor], flows: &[FlowField]) -> Result<WarpError, CoreError> {
    if frames.len() < 2 {
        return Err(CoreError::Empty("warp_error needs at least two frames"));
    }
    if flows.len() != frames.len() - 1 {
        return Err(CoreError::DimMismatch { op: "warp_error", dim: "flow count", expected: frames.len() - 1, actual: flows.len() });
    }
    let mut per_pair = Vec::with_capacity(flows.len());
    for (t, flow) in flows.iter().enumerate() {
        let mut tape = Tape::new();
        let a = tape.constant(frames[t].clone());
        let b = tape.constant(frames[t + 1].clone());
        let l = warp_consistency(&mut tape, a, b, core::slice::from_ref(flow), WarpBorder::Include)?;
        per_pair.push(tape.value(l).item() as f64);
    }
    let mean = per_pair.iter().sum::<f64>() / per_pair.len() as f64;
    Ok(WarpError { per_pair, mean })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipReport {
    pub clip: String,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub warp_error: Vec<f64>,
    pub mean_warp_error: f64,
    pub profile: Option<String>,
}

impl ClipReport {
    pub fn mean_psnr(&self) -> f64 {
        mean(&self.psnr)
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(&self.ssim)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 }
}

/// Scores an SR clip against its HR reference; `flows` are the HR flows between consecutive frames.
pub fn evaluate_clip(clip: impl Into<String>, sr: &[Tensor], hr: &[Tensor], flows: &[FlowField], peak: f64) -> Result<ClipReport, CoreError> {
    if sr.len() != hr.len() {
        return Err(CoreError::DimMismatch { op: "evaluate_clip", dim: "frame count", expected: hr.len(), actual: sr.len() });
    }
    let mut psnrs = Vec::with_capacity(sr.len());
    let mut ssims = Vec::with_capacity(sr.len());
    for (a, b) in sr.iter().zip(hr) {
        psnrs.push(psnr(a, b, peak)?);
        ssims.push(ssim(a, b, peak)?);
    }
    let we = warp_error(sr, flows)?;
    Ok(ClipReport { clip: clip.into(), psnr: psnrs, ssim: ssims, warp_error: we.per_pair, mean_warp_error: we.mean, profile: None })
}

//! Optical-flow fields, motion weight maps, endpoint error and a Horn–Schunck estimator.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::math;
use crate::tensor::{Shape, Tensor};

/// Per-pixel displacement `(u, v)` in pixels. The content at `p` in frame `t`
/// is found at `p + (u, v)` in frame `t + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f32>,
    v: Vec<f32>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::uniform(width, height, 0.0, 0.0)
    }

    pub fn uniform(width: usize, height: usize, u: f32, v: f32) -> Self {
        FlowField { width, height, u: vec![u; width * height], v: vec![v; width * height] }
    }

    pub fn new(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>) -> Result<Self, CoreError> {
        let len = width * height;
        if u.len() != len || v.len() != len {
            return Err(CoreError::DataLength { expected: len, actual: u.len().min(v.len()) });
        }
        if !u.iter().chain(&v).all(|x| x.is_finite()) {
            return Err(CoreError::NonFinite("flow field"));
        }
        Ok(FlowField { width, height, u, v })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    pub fn scaled(&self, k: f32) -> FlowField {
        FlowField {
            width: self.width,
            height: self.height,
            u: self.u.iter().map(|x| x * k).collect(),
            v: self.v.iter().map(|x| x * k).collect(),
        }
    }

    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<FlowField, CoreError> {
        if x + w > self.width || y + h > self.height {
            return Err(CoreError::OutOfRange { what: "flow crop", value: (x + w).max(y + h), limit: self.width.min(self.height) });
        }
        let mut u = Vec::with_capacity(w * h);
        let mut v = Vec::with_capacity(w * h);
        for yy in y..y + h {
            let s = yy * self.width + x;
            u.extend_from_slice(&self.u[s..s + w]);
            v.extend_from_slice(&self.v[s..s + w]);
        }
        Ok(FlowField { width: w, height: h, u, v })
    }

    pub fn mean_magnitude(&self) -> f64 {
        if self.u.is_empty() {
            return 0.0;
        }
        let s: f64 = self.u.iter().zip(&self.v).map(|(&a, &b)| math::hypot(a, b) as f64).sum();
        s / self.u.len() as f64
    }
}

/// Flow magnitude `sqrt(u² + v²)` per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMap {
    width: usize,
    height: usize,
    w: Vec<f32>,
}

impl WeightMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.w
    }

    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.w[y * self.width + x]
    }

    /// The map as a `(1, 1, h, w)` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(Shape::new(1, 1, self.height, self.width), self.w.clone()).expect("length checked at construction")
    }

    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<WeightMap, CoreError> {
        let t = self.to_tensor().crop(x, y, w, h)?;
        Ok(WeightMap { width: w, height: h, w: t.into_vec() })
    }
}

pub fn weight_map(flow: &FlowField) -> WeightMap {
    WeightMap {
        width: flow.width,
        height: flow.height,
        w: flow.u.iter().zip(&flow.v).map(|(&u, &v)| math::hypot(u, v)).collect(),
    }
}

/// Mean over pixels of the Euclidean distance between flow vectors.
pub fn endpoint_error(estimate: &FlowField, reference: &FlowField) -> Result<f64, CoreError> {
    same_size(estimate, reference)?;
    if estimate.u.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = (0..estimate.u.len())
        .map(|i| {
            let du = (estimate.u[i] - reference.u[i]) as f64;
            let dv = (estimate.v[i] - reference.v[i]) as f64;
            math::sqrt64(du * du + dv * dv)
        })
        .sum();
    Ok(s / estimate.u.len() as f64)
}

fn same_size(a: &FlowField, b: &FlowField) -> Result<(), CoreError> {
    if a.width != b.width {
        return Err(CoreError::DimMismatch { op: "flow", dim: "width", expected: a.width, actual: b.width });
    }
    if a.height != b.height {
        return Err(CoreError::DimMismatch { op: "flow", dim: "height", expected: a.height, actual: b.height });
    }
    Ok(())
}

/// ITU-R BT.601 luma weights.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// Converts image `n` of a 1- or 3-channel tensor into a single luma plane.
pub fn luma_plane(image: &Tensor, n: usize) -> Result<Vec<f32>, CoreError> {
    let s = image.shape();
    let data = image.image(n);
    let plane = s.plane();
    match s.c {
        1 => Ok(data.to_vec()),
        3 => Ok((0..plane)
            .map(|i| LUMA_WEIGHTS[0] * data[i] + LUMA_WEIGHTS[1] * data[plane + i] + LUMA_WEIGHTS[2] * data[2 * plane + i])
            .collect()),
        c => Err(CoreError::DimMismatch { op: "luma", dim: "channels (1 or 3)", expected: 3, actual: c }),
    }
}

/// Luma of every image in a batch, as a `(n, 1, h, w)` tensor.
pub fn to_luma(image: &Tensor) -> Result<Tensor, CoreError> {
    let s = image.shape();
    if s.c == 1 {
        return Ok(image.clone());
    }
    let mut data = Vec::with_capacity(s.n * s.plane());
    for n in 0..s.n {
        data.extend(luma_plane(image, n)?);
    }
    Tensor::from_vec(Shape::new(s.n, 1, s.h, s.w), data)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HornSchunck {
    /// Weight of the smoothness term, on a 0–255 intensity scale.
    pub smoothness: f32,
    pub iterations: usize,
}

impl Default for HornSchunck {
    fn default() -> Self {
        HornSchunck { smoothness: 15.0, iterations: 200 }
    }
}

/// Dense flow from `frame_a` to `frame_b` by Horn–Schunck fixed-point iteration.
///
/// Frames are batch-of-one tensors with 1 or 3 channels in `[0, 1]`; colour is
/// reduced to luma first. Intensities are rescaled to 0–255 so that
/// `smoothness` keeps the magnitude conventional for 8-bit video.
pub fn estimate_flow(frame_a: &Tensor, frame_b: &Tensor, params: HornSchunck) -> Result<FlowField, CoreError> {
    let (sa, sb) = (frame_a.shape(), frame_b.shape());
    if (sa.h, sa.w) != (sb.h, sb.w) || sa.c != sb.c {
        return Err(CoreError::ShapeMismatch { op: "estimate_flow", expected: sa, actual: sb });
    }
    if !(params.smoothness > 0.0) {
        return Err(CoreError::InvalidArgument("estimate_flow: smoothness must be positive"));
    }
    if params.iterations == 0 {
        return Err(CoreError::InvalidArgument("estimate_flow: iterations must be at least 1"));
    }
    let (w, h) = (sa.w, sa.h);
    let a: Vec<f32> = luma_plane(frame_a, 0)?.into_iter().map(|x| x * 255.0).collect();
    let b: Vec<f32> = luma_plane(frame_b, 0)?.into_iter().map(|x| x * 255.0).collect();

    // Spatial derivatives from central differences of the frame average,
    // temporal derivative from the frame difference.
    let idx = |x: isize, y: isize| -> usize {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        yc * w + xc
    };
    let mut ix = vec![0.0f32; w * h];
    let mut iy = vec![0.0f32; w * h];
    let mut it = vec![0.0f32; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = idx(x, y);
            let dxa = a[idx(x + 1, y)] - a[idx(x - 1, y)];
            let dxb = b[idx(x + 1, y)] - b[idx(x - 1, y)];
            let dya = a[idx(x, y + 1)] - a[idx(x, y - 1)];
            let dyb = b[idx(x, y + 1)] - b[idx(x, y - 1)];
            ix[i] = 0.25 * (dxa + dxb);
            iy[i] = 0.25 * (dya + dyb);
            it[i] = b[i] - a[i];
        }
    }

    let alpha2 = params.smoothness * params.smoothness;
    let mut u = vec![0.0f32; w * h];
    let mut v = vec![0.0f32; w * h];
    let mut ubar = vec![0.0f32; w * h];
    let mut vbar = vec![0.0f32; w * h];
    for _ in 0..params.iterations {
        neighbour_average(&u, w, h, &mut ubar);
        neighbour_average(&v, w, h, &mut vbar);
        for i in 0..w * h {
            let num = ix[i] * ubar[i] + iy[i] * vbar[i] + it[i];
            let den = alpha2 + ix[i] * ix[i] + iy[i] * iy[i];
            let t = num / den;
            u[i] = ubar[i] - ix[i] * t;
            v[i] = vbar[i] - iy[i] * t;
        }
    }
    FlowField::new(w, h, u, v)
}

/// Horn–Schunck Laplacian weighting: 1/6 on edge neighbours, 1/12 on corners, clamped borders.
fn neighbour_average(f: &[f32], w: usize, h: usize, out: &mut [f32]) {
    let at = |x: isize, y: isize| f[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let edge = at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1);
            let corner = at(x - 1, y - 1) + at(x + 1, y - 1) + at(x - 1, y + 1) + at(x + 1, y + 1);
            out[y as usize * w + x as usize] = edge / 6.0 + corner / 12.0;
        }
    }
}

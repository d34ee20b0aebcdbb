//! Motion-ranked patch selection.

use alloc::vec::Vec;

use crate::error::CoreError;
use crate::flow::{luma_plane, WeightMap};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchRecord {
    pub frame: usize,
    pub x: usize,
    pub y: usize,
    pub size: usize,
    /// Mean weight-map value inside the window.
    pub score: f32,
}

impl PatchRecord {
    pub fn overlaps(&self, other: &PatchRecord) -> bool {
        self.x < other.x + other.size && other.x < self.x + self.size && self.y < other.y + other.size && other.y < self.y + self.size
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankOptions {
    pub patch: usize,
    pub top_k: usize,
    pub stride: usize,
    /// Windows whose luma variance falls below this are skipped; 0 keeps all.
    pub min_variance: f32,
}

impl Default for RankOptions {
    fn default() -> Self {
        RankOptions { patch: 32, top_k: 10, stride: 8, min_variance: 0.0 }
    }
}

/// Summed-area table with one row and column of zero padding.
struct Integral {
    w: usize,
    s: Vec<f64>,
}

impl Integral {
    fn new(values: impl Iterator<Item = f64>, w: usize, h: usize) -> Self {
        let mut s = alloc::vec![0.0f64; (w + 1) * (h + 1)];
        let mut it = values;
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += it.next().unwrap_or(0.0);
                s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
            }
        }
        Integral { w, s }
    }

    fn window(&self, x: usize, y: usize, size: usize) -> f64 {
        let w1 = self.w + 1;
        let (x1, y1) = (x + size, y + size);
        self.s[y1 * w1 + x1] - self.s[y * w1 + x1] - self.s[y1 * w1 + x] + self.s[y * w1 + x]
    }
}

/// Scores every window on a `stride` grid by its mean weight and greedily
/// keeps the `top_k` best non-overlapping ones. Ties go to the earlier window
/// in raster order.
pub fn rank_patches(frame: &Tensor, weights: &WeightMap, frame_id: usize, opts: RankOptions) -> Result<Vec<PatchRecord>, CoreError> {
    let s = frame.shape();
    let (w, h) = (weights.width(), weights.height());
    if (s.w, s.h) != (w, h) {
        return Err(CoreError::DimMismatch { op: "rank_patches", dim: "weight map width", expected: s.w, actual: w });
    }
    if opts.patch == 0 || opts.patch > w || opts.patch > h {
        return Err(CoreError::OutOfRange { what: "patch size", value: opts.patch, limit: w.min(h) });
    }
    if opts.stride == 0 {
        return Err(CoreError::InvalidArgument("rank_patches: stride must be at least 1"));
    }
    let p = opts.patch;
    let area = (p * p) as f64;
    let motion = Integral::new(weights.values().iter().map(|&v| v as f64), w, h);
    let variance = if opts.min_variance > 0.0 {
        let luma = luma_plane(frame, 0)?;
        Some((
            Integral::new(luma.iter().map(|&v| v as f64), w, h),
            Integral::new(luma.iter().map(|&v| (v as f64) * (v as f64)), w, h),
        ))
    } else {
        None
    };

    let mut candidates = Vec::new();
    for y in (0..=h - p).step_by(opts.stride) {
        for x in (0..=w - p).step_by(opts.stride) {
            if let Some((sum, sq)) = &variance {
                let mean = sum.window(x, y, p) / area;
                let var = sq.window(x, y, p) / area - mean * mean;
                if var < opts.min_variance as f64 {
                    continue;
                }
            }
            let score = (motion.window(x, y, p) / area).max(0.0) as f32;
            candidates.push(PatchRecord { frame: frame_id, x, y, size: p, score });
        }
    }
    // stable sort keeps raster order among equal scores
    candidates.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut chosen: Vec<PatchRecord> = Vec::with_capacity(opts.top_k);
    for c in candidates {
        if chosen.len() == opts.top_k {
            break;
        }
        if chosen.iter().all(|k| !k.overlaps(&c)) {
            chosen.push(c);
        }
    }
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{weight_map, FlowField};
    use crate::tensor::Shape;
    use alloc::vec;

    fn block_flow(w: usize, h: usize, bx: usize, by: usize, b: usize) -> FlowField {
        let mut u = vec![0.0; w * h];
        for y in by..by + b {
            for x in bx..bx + b {
                u[y * w + x] = 2.0;
            }
        }
        FlowField::new(w, h, u, vec![0.0; w * h]).unwrap()
    }

    /// Every window position, scored by brute-force summation.
    fn exhaustive_best(wm: &WeightMap, p: usize, stride: usize) -> (usize, usize, f64) {
        let mut best = (0, 0, -1.0);
        for y in (0..=wm.height() - p).step_by(stride) {
            for x in (0..=wm.width() - p).step_by(stride) {
                let mut s = 0.0;
                for yy in y..y + p {
                    for xx in x..x + p {
                        s += wm.at(xx, yy) as f64;
                    }
                }
                if s > best.2 {
                    best = (x, y, s);
                }
            }
        }
        best
    }

    #[test]
    fn top_patch_contains_motion_block() {
        let (w, h) = (48, 40);
        let frame = Tensor::zeros(Shape::new(1, 1, h, w));
        for (bx, by) in [(5, 7), (30, 20), (0, 0), (40, 32)] {
            let wm = weight_map(&block_flow(w, h, bx, by, 8));
            let opts = RankOptions { patch: 16, top_k: 1, stride: 4, min_variance: 0.0 };
            let top = rank_patches(&frame, &wm, 0, opts).unwrap()[0];
            let (ex, ey, _) = exhaustive_best(&wm, 16, 4);
            assert_eq!((top.x, top.y), (ex, ey));
            assert!(top.x <= bx && bx + 8 <= top.x + 16 && top.y <= by && by + 8 <= top.y + 16, "{top:?}");
        }
    }

    #[test]
    fn zero_weights_select_in_raster_order() {
        let frame = Tensor::zeros(Shape::new(1, 1, 32, 32));
        let wm = weight_map(&FlowField::zeros(32, 32));
        let got = rank_patches(&frame, &wm, 3, RankOptions { patch: 16, top_k: 3, stride: 8, min_variance: 0.0 }).unwrap();
        let origins: Vec<_> = got.iter().map(|r| (r.x, r.y)).collect();
        assert_eq!(origins, [(0, 0), (16, 0), (0, 16)]);
        assert!(got.iter().all(|r| r.frame == 3 && r.score == 0.0));
    }

    #[test]
    fn saturates_without_error() {
        let frame = Tensor::zeros(Shape::new(1, 1, 32, 32));
        let wm = weight_map(&FlowField::uniform(32, 32, 1.0, 1.0));
        let got = rank_patches(&frame, &wm, 0, RankOptions { patch: 16, top_k: 50, stride: 4, min_variance: 0.0 }).unwrap();
        assert_eq!(got.len(), 4);
        for (i, a) in got.iter().enumerate() {
            assert!(a.x + a.size <= 32 && a.y + a.size <= 32);
            for b in &got[i + 1..] {
                assert!(!a.overlaps(b));
            }
        }
    }

    #[test]
    fn variance_filter_drops_flat_windows() {
        let frame = Tensor::from_fn(Shape::new(1, 1, 16, 32), |_, _, y, x| if x >= 16 { ((x + y) % 2) as f32 } else { 0.5 });
        let wm = weight_map(&FlowField::uniform(32, 16, 1.0, 0.0));
        let got = rank_patches(&frame, &wm, 0, RankOptions { patch: 16, top_k: 4, stride: 16, min_variance: 0.01 }).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].x, 16);
    }

    #[test]
    fn oversized_patch_rejected() {
        let frame = Tensor::zeros(Shape::new(1, 1, 8, 8));
        let wm = weight_map(&FlowField::zeros(8, 8));
        assert!(rank_patches(&frame, &wm, 0, RankOptions { patch: 9, ..RankOptions::default() }).is_err());
    }
}

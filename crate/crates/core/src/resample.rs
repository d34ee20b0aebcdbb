//! Separable bicubic resampling (cubic convolution, `a = -0.5`).
//!
//! Pixel-centre alignment: output pixel `j` maps to source coordinate
//! `(j + 0.5) * in / out - 0.5`. Taps beyond the edge are clamped. When
//! shrinking, the kernel is stretched by the scale factor so that it also
//! acts as the anti-aliasing filter.

use alloc::vec::Vec;

use crate::error::CoreError;
use crate::math;
use crate::tensor::{Shape, Tensor};

pub const CUBIC_A: f32 = -0.5;

/// Keys' cubic convolution kernel.
pub fn cubic_kernel(t: f32) -> f32 {
    let a = CUBIC_A;
    let t = t.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

/// Point sample of a 1-D signal at continuous position `x` with four clamped taps.
pub fn cubic_sample(signal: &[f32], x: f32) -> f32 {
    let last = signal.len() as isize - 1;
    let base = math::floor(x) as isize;
    let mut acc = 0.0;
    for i in base - 1..=base + 2 {
        let w = cubic_kernel(x - i as f32);
        acc += w * signal[i.clamp(0, last) as usize];
    }
    acc
}

struct Taps {
    // per output sample: (first tap slot in `index`/`weight`, count, anchor index)
    spans: Vec<(usize, usize, usize)>,
    index: Vec<usize>,
    weight: Vec<f32>,
}

fn taps(input: usize, output: usize) -> Taps {
    let scale = input as f32 / output as f32;
    let stretch = scale.max(1.0);
    let support = 2.0 * stretch;
    let last = input as isize - 1;
    let mut t = Taps { spans: Vec::with_capacity(output), index: Vec::new(), weight: Vec::new() };
    for j in 0..output {
        let center = (j as f32 + 0.5) * scale - 0.5;
        let lo = math::floor(center - support) as isize + 1;
        let hi = math::floor(center + support) as isize;
        let start = t.index.len();
        let mut total = 0.0f32;
        for i in lo..=hi {
            let w = cubic_kernel((i as f32 - center) / stretch);
            if w == 0.0 {
                continue;
            }
            t.index.push(i.clamp(0, last) as usize);
            t.weight.push(w);
            total += w;
        }
        for w in &mut t.weight[start..] {
            *w /= total;
        }
        let anchor = math::round(center).clamp(0.0, last as f32) as usize;
        t.spans.push((start, t.index.len() - start, anchor));
    }
    t
}

/// Weighted sum written relative to one source sample so that flat regions
/// come out bit-exact: `x_a + sum w_i (x_i - x_a)`.
#[inline]
fn apply(t: &Taps, j: usize, read: impl Fn(usize) -> f32) -> f32 {
    let (start, count, anchor) = t.spans[j];
    let base = read(anchor);
    let mut acc = 0.0f32;
    for k in start..start + count {
        acc += t.weight[k] * (read(t.index[k]) - base);
    }
    base + acc
}

pub fn bicubic_resize(image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor, CoreError> {
    if out_h == 0 || out_w == 0 {
        return Err(CoreError::InvalidArgument("bicubic_resize: output size must be at least 1x1"));
    }
    let s = image.shape();
    if s.h == 0 || s.w == 0 {
        return Err(CoreError::Empty("bicubic_resize"));
    }
    let tx = taps(s.w, out_w);
    let ty = taps(s.h, out_h);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, out_h, out_w));
    let mut rows = alloc::vec![0.0f32; s.h * out_w];
    for n in 0..s.n {
        for c in 0..s.c {
            let src = &image.data()[s.index(n, c, 0, 0)..][..s.plane()];
            for y in 0..s.h {
                let row = &src[y * s.w..(y + 1) * s.w];
                for x in 0..out_w {
                    rows[y * out_w + x] = apply(&tx, x, |i| row[i]);
                }
            }
            let os = out.shape();
            let base = os.index(n, c, 0, 0);
            let dst = &mut out.data_mut()[base..base + os.plane()];
            for y in 0..out_h {
                for x in 0..out_w {
                    dst[y * out_w + x] = apply(&ty, y, |i| rows[i * out_w + x]);
                }
            }
        }
    }
    Ok(out)
}

/// Bicubic `scale`x downsampling followed by upsampling back to the input size.
/// Returns `(low_res, upsampled)`.
pub fn degrade(hr: &Tensor, scale: usize) -> Result<(Tensor, Tensor), CoreError> {
    let s = hr.shape();
    if scale == 0 || s.h % scale != 0 || s.w % scale != 0 {
        return Err(CoreError::DimMismatch { op: "degrade", dim: "frame size (multiple of scale)", expected: scale, actual: s.h.min(s.w) % scale.max(1) });
    }
    let lr = bicubic_resize(hr, s.h / scale, s.w / scale)?;
    let up = bicubic_resize(&lr, s.h, s.w)?;
    Ok((lr, up))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_taps_at_half_pixel() {
        let taps: Vec<f32> = [1.5f32, 0.5, 0.5, 1.5].iter().map(|&t| cubic_kernel(t)).collect();
        assert_eq!(taps, [-0.0625, 0.5625, 0.5625, -0.0625]);
        assert_eq!(cubic_sample(&[0.0, 1.0, 0.0, 0.0], 1.5), 0.5625);
    }

    #[test]
    fn kernel_interpolates() {
        assert_eq!(cubic_kernel(0.0), 1.0);
        assert_eq!(cubic_kernel(1.0), 0.0);
        assert_eq!(cubic_kernel(2.0), 0.0);
        // partition of unity at any fractional offset
        for f in [0.1f32, 0.25, 0.77] {
            let s: f32 = (-1..=2).map(|i| cubic_kernel(f - i as f32)).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Tensor::full(Shape::new(1, 3, 20, 12), 0.3711);
        for (h, w) in [(5, 3), (40, 24), (7, 31), (1, 1)] {
            let out = bicubic_resize(&img, h, w).unwrap();
            assert_eq!(out.shape(), Shape::new(1, 3, h, w));
            assert!(out.data().iter().all(|&v| v == 0.3711));
        }
    }

    #[test]
    fn quarter_downsample_shape() {
        let img = Tensor::zeros(Shape::new(1, 1, 64, 64));
        assert_eq!(bicubic_resize(&img, 16, 16).unwrap().shape(), Shape::new(1, 1, 16, 16));
        let (lr, up) = degrade(&img, 4).unwrap();
        assert_eq!(lr.shape(), Shape::new(1, 1, 16, 16));
        assert_eq!(up.shape(), img.shape());
        assert!(degrade(&Tensor::zeros(Shape::new(1, 1, 30, 32)), 4).is_err());
    }

    #[test]
    fn integer_upsample_matches_point_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sig: Vec<f32> = (0..6).map(|_| rng.gen_range(0.0..1.0)).collect();
        let img = Tensor::from_vec(Shape::new(1, 1, 1, 6), sig.clone()).unwrap();
        let up = bicubic_resize(&img, 1, 12).unwrap();
        for j in 0..12 {
            let x = (j as f32 + 0.5) / 2.0 - 0.5;
            assert!((up.data()[j] - cubic_sample(&sig, x)).abs() < 1e-6);
        }
    }

    #[test]
    fn round_trip_loses_detail_but_not_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = Tensor::from_fn(Shape::new(1, 1, 32, 32), |_, _, _, _| rng.gen_range(0.0..1.0));
        let (_, up) = degrade(&img, 4).unwrap();
        let mse = |a: &Tensor, b: &Tensor| a.data().iter().zip(b.data()).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>() / a.len() as f64;
        let zero = Tensor::zeros(img.shape());
        let e = mse(&img, &up);
        assert!(e > 0.0 && e < mse(&img, &zero));
    }
}

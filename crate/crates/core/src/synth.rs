//! Seeded synthetic clips with known motion: a translating texture and a
//! textured block moving over a static background.

use alloc::vec::Vec;
use core::f32::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::CoreError;
use crate::flow::FlowField;
use crate::math;
use crate::tensor::{Shape, Tensor};

/// Band-limited random texture: a sum of oriented cosines, one coefficient set per channel.
#[derive(Clone, Debug)]
pub struct Texture {
    // (kx, ky, phase) in radians per pixel
    waves: Vec<(f32, f32, f32)>,
    // amplitudes[c][k]
    amplitudes: Vec<Vec<f32>>,
    contrast: f32,
}

impl Texture {
    pub fn new<R: Rng>(rng: &mut R, channels: usize, min_period: f32, max_period: f32, components: usize) -> Self {
        let waves = (0..components)
            .map(|_| {
                let period = rng.gen_range(min_period..max_period);
                let angle = rng.gen_range(0.0..PI);
                let k = 2.0 * PI / period;
                (k * math::cos(angle), k * math::cos(angle - PI / 2.0), rng.gen_range(0.0..2.0 * PI))
            })
            .collect();
        let amplitudes = (0..channels)
            .map(|_| (0..components).map(|_| rng.gen_range(0.2f32..1.0)).collect())
            .collect();
        Texture { waves, amplitudes, contrast: 0.2 }
    }

    /// Low-frequency texture suited to flow estimation (periods 10–40 px).
    pub fn smooth<R: Rng>(rng: &mut R, channels: usize) -> Self {
        Self::new(rng, channels, 10.0, 40.0, 12)
    }

    /// Texture with detail above the Nyquist limit of a 4x-downsampled frame.
    pub fn detailed<R: Rng>(rng: &mut R, channels: usize) -> Self {
        Self::new(rng, channels, 4.0, 24.0, 16)
    }

    pub fn with_contrast(mut self, contrast: f32) -> Self {
        self.contrast = contrast;
        self
    }

    pub fn channels(&self) -> usize {
        self.amplitudes.len()
    }

    /// Intensity in `[0, 1]` at continuous position `(x, y)`.
    pub fn eval(&self, c: usize, x: f32, y: f32) -> f32 {
        let amps = &self.amplitudes[c];
        let mut s = 0.0f32;
        let mut energy = 0.0f32;
        for (&(kx, ky, phase), &a) in self.waves.iter().zip(amps) {
            s += a * math::cos(kx * x + ky * y + phase);
            energy += a * a;
        }
        let z = s / math::sqrt(energy * 0.5);
        (0.5 + self.contrast * z).clamp(0.0, 1.0)
    }
}

/// Rounds to the nearest 8-bit level so in-memory clips match their PNG encoding.
#[inline]
pub fn quantize(v: f32) -> f32 {
    math::round(v.clamp(0.0, 1.0) * 255.0) / 255.0
}

/// Renders the texture displaced by `(dx, dy)`: pixel `p` shows `T(p - d)`.
pub fn texture_frame(tex: &Texture, width: usize, height: usize, dx: f32, dy: f32) -> Tensor {
    Tensor::from_fn(Shape::new(1, tex.channels(), height, width), |_, c, y, x| {
        quantize(tex.eval(c, x as f32 - dx, y as f32 - dy))
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    TranslatingTexture,
    MovingForeground,
}

impl SynthKind {
    pub fn name(self) -> &'static str {
        match self {
            SynthKind::TranslatingTexture => "translating-texture",
            SynthKind::MovingForeground => "moving-foreground",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "translating-texture" => Some(SynthKind::TranslatingTexture),
            "moving-foreground" => Some(SynthKind::MovingForeground),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub channels: usize,
    /// Fixed per-frame displacement for translating textures; random per clip when `None`.
    pub shift: Option<(f32, f32)>,
    /// Side of the moving block, in pixels.
    pub block: usize,
}

impl SynthConfig {
    pub fn new(kind: SynthKind) -> Self {
        SynthConfig { kind, width: 64, height: 64, frames: 8, channels: 1, shift: None, block: 20 }
    }
}

/// One generated clip with its ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticClip {
    pub frames: Vec<Tensor>,
    /// `flows[t]` maps frame `t` to frame `t + 1`.
    pub flows: Vec<FlowField>,
    /// Moving-foreground only: 1 inside the block, 0 elsewhere, per frame.
    pub masks: Option<Vec<Tensor>>,
}

/// Derives the generator for clip `index` of a dataset seeded with `seed`.
pub fn clip_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

pub fn make_synthetic_dataset(cfg: &SynthConfig, seed: u64, count: usize) -> Result<Vec<SyntheticClip>, CoreError> {
    if count == 0 {
        return Err(CoreError::InvalidArgument("synthetic dataset count must be at least 1"));
    }
    if cfg.frames < 2 || cfg.width == 0 || cfg.height == 0 {
        return Err(CoreError::InvalidArgument("synthetic clips need at least 2 frames and a non-empty frame"));
    }
    if cfg.channels != 1 && cfg.channels != 3 {
        return Err(CoreError::InvalidArgument("synthetic clips have 1 or 3 channels"));
    }
    (0..count)
        .map(|i| {
            let mut rng = clip_rng(seed, i);
            match cfg.kind {
                SynthKind::TranslatingTexture => Ok(translating_texture(cfg, &mut rng)),
                SynthKind::MovingForeground => moving_foreground(cfg, &mut rng),
            }
        })
        .collect()
}

fn translating_texture(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> SyntheticClip {
    let tex = Texture::detailed(rng, cfg.channels);
    let (dx, dy) = cfg.shift.unwrap_or_else(|| {
        let angle = rng.gen_range(0.0..2.0 * PI);
        let mag = rng.gen_range(0.5f32..2.0);
        // quarter-pixel grid keeps recorded flow exactly representable
        let q = |v: f32| math::round(v * 4.0) / 4.0;
        (q(mag * math::cos(angle)), q(mag * math::cos(angle - PI / 2.0)))
    });
    let frames = (0..cfg.frames)
        .map(|t| texture_frame(&tex, cfg.width, cfg.height, dx * t as f32, dy * t as f32))
        .collect();
    let flows = (0..cfg.frames - 1).map(|_| FlowField::uniform(cfg.width, cfg.height, dx, dy)).collect();
    SyntheticClip { frames, flows, masks: None }
}

fn moving_foreground(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<SyntheticClip, CoreError> {
    let b = cfg.block;
    if b == 0 || b >= cfg.width || b >= cfg.height {
        return Err(CoreError::InvalidArgument("moving block must be smaller than the frame"));
    }
    let background = Texture::new(rng, cfg.channels, 3.0, 8.0, 16).with_contrast(0.25);
    let foreground = Texture::detailed(rng, cfg.channels).with_contrast(0.25);
    let (max_x, max_y) = ((cfg.width - b) as i64, (cfg.height - b) as i64);
    let mut pos = (rng.gen_range(0..=max_x), rng.gen_range(0..=max_y));
    let mut vel = loop {
        let v = (rng.gen_range(-3i64..=3), rng.gen_range(-3i64..=3));
        if v != (0, 0) {
            break v;
        }
    };
    let mut path = Vec::with_capacity(cfg.frames);
    for _ in 0..cfg.frames {
        path.push(pos);
        for (p, v, max) in [(&mut pos.0, &mut vel.0, max_x), (&mut pos.1, &mut vel.1, max_y)] {
            let mut next = *p + *v;
            if next < 0 || next > max {
                *v = -*v;
                next = (*p + *v).clamp(0, max);
            }
            *p = next;
        }
    }

    let inside = |(bx, by): (i64, i64), x: usize, y: usize| {
        let (x, y) = (x as i64, y as i64);
        x >= bx && x < bx + b as i64 && y >= by && y < by + b as i64
    };
    let mut frames = Vec::with_capacity(cfg.frames);
    let mut masks = Vec::with_capacity(cfg.frames);
    for &p in &path {
        frames.push(Tensor::from_fn(Shape::new(1, cfg.channels, cfg.height, cfg.width), |_, c, y, x| {
            if inside(p, x, y) {
                quantize(foreground.eval(c, (x as i64 - p.0) as f32, (y as i64 - p.1) as f32))
            } else {
                quantize(background.eval(c, x as f32, y as f32))
            }
        }));
        masks.push(Tensor::from_fn(Shape::new(1, 1, cfg.height, cfg.width), |_, _, y, x| {
            if inside(p, x, y) { 1.0 } else { 0.0 }
        }));
    }
    let mut flows = Vec::with_capacity(cfg.frames - 1);
    for t in 0..cfg.frames - 1 {
        let (p, q) = (path[t], path[t + 1]);
        let (du, dv) = ((q.0 - p.0) as f32, (q.1 - p.1) as f32);
        let mut u = alloc::vec![0.0f32; cfg.width * cfg.height];
        let mut v = alloc::vec![0.0f32; cfg.width * cfg.height];
        for y in 0..cfg.height {
            for x in 0..cfg.width {
                if inside(p, x, y) {
                    u[y * cfg.width + x] = du;
                    v[y * cfg.width + x] = dv;
                }
            }
        }
        flows.push(FlowField::new(cfg.width, cfg.height, u, v)?);
    }
    Ok(SyntheticClip { frames, flows, masks: Some(masks) })
}

//! Pieces shared by both trainers: the aligned patch sample, batching,
//! epoch-ordered sampling and the learning-rate schedule.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::CoreError;
use crate::flow::{weight_map, FlowField};
use crate::models::SrConfig;
use crate::optim::AdamConfig;
use crate::tensor::{ensure_same_shape, Shape, Tensor};

/// One spatially aligned training unit cut from consecutive frames `t`, `t+1`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSample {
    pub hr_t: Tensor,
    pub hr_t1: Tensor,
    pub lr_up_t: Tensor,
    pub lr_up_t1: Tensor,
    /// Flow from `hr_t` to `hr_t1`, estimated on the HR frames.
    pub flow: FlowField,
}

impl PatchSample {
    pub fn validate(&self) -> Result<(), CoreError> {
        let s = self.hr_t.shape();
        if s.n != 1 {
            return Err(CoreError::DimMismatch { op: "patch sample", dim: "batch size", expected: 1, actual: s.n });
        }
        for t in [&self.hr_t1, &self.lr_up_t, &self.lr_up_t1] {
            ensure_same_shape("patch sample", s, t.shape())?;
        }
        if self.flow.width() != s.w || self.flow.height() != s.h {
            return Err(CoreError::DimMismatch { op: "patch sample", dim: "flow size", expected: s.w, actual: self.flow.width() });
        }
        Ok(())
    }

    pub fn shape(&self) -> Shape {
        self.hr_t.shape()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f32,
    /// Multiply the learning rate by `lr_decay_factor` every this many epochs; 0 disables.
    pub lr_decay_every_epochs: usize,
    pub lr_decay_factor: f32,
    pub adam: AdamConfig,
    pub model: SrConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.batch_size == 0 {
            return Err(CoreError::InvalidArgument("batch size must be at least 1"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(CoreError::InvalidArgument("learning rate must be finite and nonnegative"));
        }
        if !(self.lr_decay_factor > 0.0) {
            return Err(CoreError::InvalidArgument("learning-rate decay factor must be positive"));
        }
        if self.model.depth < 2 {
            return Err(CoreError::InvalidArgument("model depth must be at least 2"));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at_epoch(&self, epoch: usize) -> f32 {
        if self.lr_decay_every_epochs == 0 {
            return self.lr;
        }
        let drops = (epoch / self.lr_decay_every_epochs) as i32;
        self.lr * crate::math::powi(self.lr_decay_factor, drops)
    }

    pub(crate) fn model_seed(&self) -> u64 {
        self.seed
    }

    pub(crate) fn sampler_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(0x5a4d_7e11);
        rng
    }
}

/// Draws sample indices in a fresh seeded permutation each epoch.
#[derive(Clone, Debug)]
pub struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    epoch: usize,
    rng: ChaCha8Rng,
}

impl EpochSampler {
    pub fn new(len: usize, mut rng: ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        EpochSampler { order, pos: 0, epoch: 0, rng }
    }

    /// Epoch of the next index to be drawn.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
                self.epoch += 1;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Stacked batch of samples, frame `t` only, with per-pixel motion weights.
#[derive(Clone, Debug)]
pub struct SosrBatch {
    pub lr_up: Tensor,
    pub hr: Tensor,
    /// `(n, 1, h, w)` flow magnitudes.
    pub weights: Tensor,
}

impl SosrBatch {
    pub fn from_samples(samples: &[&PatchSample]) -> Result<Self, CoreError> {
        let lr: Vec<Tensor> = samples.iter().map(|s| s.lr_up_t.clone()).collect();
        let hr: Vec<Tensor> = samples.iter().map(|s| s.hr_t.clone()).collect();
        let w: Vec<Tensor> = samples.iter().map(|s| weight_map(&s.flow).to_tensor()).collect();
        let batch = SosrBatch { lr_up: Tensor::stack(&lr)?, hr: Tensor::stack(&hr)?, weights: Tensor::stack(&w)? };
        batch.validate()?;
        Ok(batch)
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        let s = self.hr.shape();
        ensure_same_shape("sosr batch", s, self.lr_up.shape())?;
        ensure_same_shape("sosr batch", Shape::new(s.n, 1, s.h, s.w), self.weights.shape())
    }
}

/// Batch of consecutive frame pairs with their HR flows.
#[derive(Clone, Debug)]
pub struct PairBatch {
    pub hr_t: Tensor,
    pub hr_t1: Tensor,
    pub lr_up_t: Tensor,
    pub lr_up_t1: Tensor,
    pub flows: Vec<FlowField>,
}

impl PairBatch {
    pub fn from_samples(samples: &[&PatchSample]) -> Result<Self, CoreError> {
        let col = |f: fn(&PatchSample) -> &Tensor| -> Result<Tensor, CoreError> {
            Tensor::stack(&samples.iter().map(|s| f(s).clone()).collect::<Vec<_>>())
        };
        let b = PairBatch {
            hr_t: col(|s| &s.hr_t)?,
            hr_t1: col(|s| &s.hr_t1)?,
            lr_up_t: col(|s| &s.lr_up_t)?,
            lr_up_t1: col(|s| &s.lr_up_t1)?,
            flows: samples.iter().map(|s| s.flow.clone()).collect(),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn single(sample: &PatchSample) -> Result<Self, CoreError> {
        Self::from_samples(&[sample])
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        let s = self.hr_t.shape();
        for t in [&self.hr_t1, &self.lr_up_t, &self.lr_up_t1] {
            ensure_same_shape("frame pair", s, t.shape())?;
        }
        if self.flows.len() != s.n {
            return Err(CoreError::DimMismatch { op: "frame pair", dim: "flow count", expected: s.n, actual: self.flows.len() });
        }
        for f in &self.flows {
            if f.width() != s.w || f.height() != s.h {
                return Err(CoreError::DimMismatch { op: "frame pair", dim: "flow width", expected: s.w, actual: f.width() });
            }
        }
        Ok(())
    }
}

pub(crate) fn gather<'a>(samples: &'a [PatchSample], idx: &[usize]) -> Vec<&'a PatchSample> {
    idx.iter().map(|&i| &samples[i]).collect()
}

pub(crate) fn check_dataset(samples: &[PatchSample], channels: usize) -> Result<(), CoreError> {
    let first = samples.first().ok_or(CoreError::Empty("training dataset"))?;
    for s in samples {
        s.validate()?;
        ensure_same_shape("training dataset", first.shape(), s.shape())?;
    }
    if first.shape().c != channels {
        return Err(CoreError::DimMismatch { op: "training dataset", dim: "channels", expected: channels, actual: first.shape().c });
    }
    Ok(())
}

//! Paired training runs on synthetic data that compare one objective against
//! its ablated baseline at equal architecture, seed and budget.

use alloc::vec::Vec;
use core::ops::ControlFlow;

use crate::dataset::{clip_samples, degrade_clip, PrepOptions};
use crate::error::CoreError;
use crate::metrics::{masked_mse, warp_error};
use crate::models::{SrConfig, SrModel};
use crate::optim::AdamConfig;
use crate::patches::RankOptions;
use crate::sosr::{train_sosr, PixelLoss, SosrConfig, SosrWeights};
use crate::synth::{make_synthetic_dataset, SynthConfig, SynthKind, SyntheticClip};
use crate::tosr::{train_tosr, TosrConfig, TosrWeights, WarpBorder};
use crate::tensor::Tensor;
use crate::train::{PatchSample, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct AblationConfig {
    pub synth: SynthConfig,
    pub train_clips: usize,
    pub test_clips: usize,
    pub prep: PrepOptions,
    pub train: TrainConfig,
}

impl AblationConfig {
    /// Desk-scale defaults for `kind`: 64x64 clips, 32x32 patches, a 4-layer, 8-wide model.
    pub fn desk(kind: SynthKind, seed: u64) -> Self {
        AblationConfig {
            synth: SynthConfig::new(kind),
            train_clips: 6,
            test_clips: 3,
            prep: PrepOptions { scale: 4, rank: RankOptions { patch: 32, top_k: 2, stride: 8, min_variance: 0.0 } },
            train: TrainConfig {
                seed,
                iterations: 500,
                batch_size: 8,
                lr: 1e-3,
                lr_decay_every_epochs: 0,
                lr_decay_factor: 0.1,
                adam: AdamConfig::default(),
                model: SrConfig::new(4, 8, 1),
            },
        }
    }

    /// Training and held-out clips, generated from disjoint seeds derived from the run seed.
    fn clips(&self) -> Result<(Vec<SyntheticClip>, Vec<SyntheticClip>), CoreError> {
        let seed = self.train.seed;
        let train = make_synthetic_dataset(&self.synth, seed.wrapping_mul(2).wrapping_add(1), self.train_clips)?;
        let test = make_synthetic_dataset(&self.synth, seed.wrapping_mul(2).wrapping_add(2), self.test_clips)?;
        Ok((train, test))
    }

    fn samples(&self, clips: &[SyntheticClip]) -> Result<Vec<PatchSample>, CoreError> {
        let mut out = Vec::new();
        for clip in clips {
            out.extend(clip_samples(&clip.frames, &clip.flows, self.prep)?.into_iter().map(|(_, s)| s));
        }
        Ok(out)
    }
}

/// Held-out score of the objective under test and of its baseline; lower is better.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Comparison {
    pub objective: f64,
    pub baseline: f64,
}

impl Comparison {
    pub fn objective_wins(&self) -> bool {
        self.objective < self.baseline
    }
}

/// Super-resolves HR frames from their degraded versions.
pub fn super_resolve(model: &SrModel, frames: &[Tensor], scale: usize) -> Result<Vec<Tensor>, CoreError> {
    degrade_clip(frames, scale)?.iter().map(|u| model.infer(u)).collect()
}

/// Two models trained on the same clips from the same seed, and the held-out clips.
#[derive(Clone, Debug)]
pub struct PairedModels {
    pub objective: SrModel,
    pub baseline: SrModel,
    pub test: Vec<SyntheticClip>,
}

/// Trains with `weights` and with the per-frame baseline (`beta = gamma = 0`) on translating textures.
pub fn tosr_pair(cfg: &AblationConfig, weights: TosrWeights) -> Result<PairedModels, CoreError> {
    let (train, test) = cfg.clips()?;
    let samples = cfg.samples(&train)?;
    let fit = |w: TosrWeights| -> Result<SrModel, CoreError> {
        let run = TosrConfig { train: cfg.train, weights: w, border: WarpBorder::Include };
        Ok(train_tosr(&samples, &run, |_, _| ControlFlow::Continue(()))?.model)
    };
    Ok(PairedModels { objective: fit(weights)?, baseline: fit(TosrWeights { beta: 0.0, gamma: 0.0, ..weights })?, test })
}

/// Trains with the WMSE pixel term and with plain MSE in its place on moving-foreground clips.
pub fn sosr_pair(cfg: &AblationConfig, weights: SosrWeights, use_feature: bool, use_adversarial: bool) -> Result<PairedModels, CoreError> {
    let (train, test) = cfg.clips()?;
    let samples = cfg.samples(&train)?;
    let fit = |pixel_loss: PixelLoss| -> Result<SrModel, CoreError> {
        let run = SosrConfig { train: cfg.train, weights, pixel_loss, use_feature, use_adversarial, disc_lr: cfg.train.lr, disc_width: 4 };
        Ok(train_sosr(&samples, &run, |_, _| ControlFlow::Continue(()))?.model)
    };
    Ok(PairedModels { objective: fit(PixelLoss::Wmse)?, baseline: fit(PixelLoss::Mse)?, test })
}

/// Mean held-out warp error of a model trained with `weights` and of one
/// trained with the per-frame baseline, on translating textures.
pub fn tosr_ablation(cfg: &AblationConfig, weights: TosrWeights) -> Result<Comparison, CoreError> {
    let pair = tosr_pair(cfg, weights)?;
    let score = |model: &SrModel| -> Result<f64, CoreError> {
        let mut total = 0.0;
        for clip in &pair.test {
            total += warp_error(&super_resolve(model, &clip.frames, cfg.prep.scale)?, &clip.flows)?.mean;
        }
        Ok(total / pair.test.len() as f64)
    };
    Ok(Comparison { objective: score(&pair.objective)?, baseline: score(&pair.baseline)? })
}

/// Held-out MSE inside the moving-block mask for a WMSE-trained model and a
/// plain-MSE-trained model, on moving-foreground clips.
pub fn sosr_ablation(cfg: &AblationConfig, weights: SosrWeights, use_feature: bool, use_adversarial: bool) -> Result<Comparison, CoreError> {
    let pair = sosr_pair(cfg, weights, use_feature, use_adversarial)?;
    let score = |model: &SrModel| -> Result<f64, CoreError> {
        let (mut total, mut n) = (0.0, 0usize);
        for clip in &pair.test {
            let masks = clip.masks.as_ref().ok_or(CoreError::InvalidArgument("sosr ablation needs moving-foreground clips"))?;
            let sr = super_resolve(model, &clip.frames, cfg.prep.scale)?;
            for ((s, h), m) in sr.iter().zip(&clip.frames).zip(masks) {
                total += masked_mse(s, h, m)?;
                n += 1;
            }
        }
        Ok(total / n as f64)
    };
    Ok(Comparison { objective: score(&pair.objective)?, baseline: score(&pair.baseline)? })
}

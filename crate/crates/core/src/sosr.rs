//! Spatial-oriented objective: motion-weighted MSE plus feature and
//! adversarial terms, trained with alternating discriminator/generator steps.

use alloc::vec::Vec;
use core::ops::ControlFlow;

use crate::error::CoreError;
use crate::models::{build_discriminator, build_feature_extractor, build_sr_net, Discriminator, FeatureExtractor, SrModel};
use crate::optim::Adam;
use crate::tape::{Tape, Var};
use crate::tensor::{ensure_same_shape, Shape, Tensor};
use crate::train::{check_dataset, gather, EpochSampler, PatchSample, SosrBatch, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SosrWeights {
    pub alpha: f32,
    pub beta: f32,
    pub gamma: f32,
}

impl SosrWeights {
    /// WMSE 1, feature 1, adversarial 0.005.
    pub const DEFAULT: SosrWeights = SosrWeights { alpha: 1.0, beta: 1.0, gamma: 0.005 };

    pub fn validate(&self) -> Result<(), CoreError> {
        if [self.alpha, self.beta, self.gamma].iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(CoreError::InvalidArgument("SoSR loss weights must be finite and nonnegative"))
        }
    }
}

impl Default for SosrWeights {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Motion-weighted MSE: `(1/N) sum_p ||sr(p) - hr(p)||^2 * w(p)`, where the
/// squared error at `p` is summed over channels and `N = n * h * w`.
///
/// `weights` is an `(n, 1, h, w)` constant.
pub fn wmse(tape: &mut Tape, sr: Var, hr: Var, weights: &Tensor) -> Result<Var, CoreError> {
    let s = tape.value(sr).shape();
    ensure_same_shape("wmse", s, tape.value(hr).shape())?;
    ensure_same_shape("wmse", Shape::new(s.n, 1, s.h, s.w), weights.shape())?;
    let plane = s.plane();
    let expanded = Tensor::from_fn(s, |n, _, y, x| weights.data()[n * plane + y * s.w + x]);
    let w = tape.constant(expanded);
    let d = tape.sub(sr, hr)?;
    let sq = tape.mul(d, d)?;
    let weighted = tape.mul(sq, w)?;
    let total = tape.sum(weighted);
    Ok(tape.scale(total, 1.0 / (s.n * plane) as f32))
}

/// Plain per-pixel MSE with the same normalisation as [`wmse`] (channel sum, pixel mean).
pub fn pixel_mse(tape: &mut Tape, sr: Var, hr: Var) -> Result<Var, CoreError> {
    let s = tape.value(sr).shape();
    let ones = Tensor::ones(Shape::new(s.n, 1, s.h, s.w));
    wmse(tape, sr, hr, &ones)
}

pub fn wmse_value(sr: &Tensor, hr: &Tensor, weights: &Tensor) -> Result<f32, CoreError> {
    let mut tape = Tape::new();
    let a = tape.constant(sr.clone());
    let b = tape.constant(hr.clone());
    let l = wmse(&mut tape, a, b, weights)?;
    Ok(tape.value(l).item())
}

/// Mean squared difference of extractor features; `hr` should be a constant.
pub fn feature_loss(tape: &mut Tape, sr: Var, hr: Var, extractor: &FeatureExtractor) -> Result<Var, CoreError> {
    let fs = extractor.forward(tape, sr)?;
    let fh = extractor.forward(tape, hr)?;
    tape.mse(fs, fh)
}

/// `mean(-ln σ(D(sr)))`, the non-saturating generator loss.
pub fn generator_adversarial_loss(tape: &mut Tape, disc: &Discriminator, sr: Var) -> Result<Var, CoreError> {
    let logits = disc.forward(tape, sr)?;
    let neg = tape.scale(logits, -1.0);
    let sp = tape.softplus(neg);
    Ok(tape.mean(sp))
}

/// `mean(-ln σ(D(hr)) - ln(1 - σ(D(sr))))`.
pub fn discriminator_loss(tape: &mut Tape, disc: &Discriminator, sr: Var, hr: Var) -> Result<Var, CoreError> {
    let real = disc.forward(tape, hr)?;
    let fake = disc.forward(tape, sr)?;
    let neg_real = tape.scale(real, -1.0);
    let real_term = tape.softplus(neg_real);
    let fake_term = tape.softplus(fake);
    let both = tape.add(real_term, fake_term)?;
    Ok(tape.mean(both))
}

/// Returns `(generator_loss, discriminator_loss)` on one tape.
pub fn adversarial_losses(tape: &mut Tape, disc: &Discriminator, sr: Var, hr: Var) -> Result<(Var, Var), CoreError> {
    let g = generator_adversarial_loss(tape, disc, sr)?;
    let d = discriminator_loss(tape, disc, sr, hr)?;
    Ok((g, d))
}

pub fn sosr_total(wmse: f32, feature: f32, adversarial: f32, w: SosrWeights) -> f32 {
    w.alpha * wmse + w.beta * feature + w.gamma * adversarial
}

fn weighted_sum(tape: &mut Tape, terms: &[(Option<Var>, f32)]) -> Result<Var, CoreError> {
    let mut acc: Option<Var> = None;
    for &(term, weight) in terms {
        let Some(t) = term else { continue };
        let scaled = tape.scale(t, weight);
        acc = Some(match acc {
            Some(a) => tape.add(a, scaled)?,
            None => scaled,
        });
    }
    acc.ok_or(CoreError::Empty("loss terms"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PixelLoss {
    Wmse,
    Mse,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SosrConfig {
    pub train: TrainConfig,
    pub weights: SosrWeights,
    pub pixel_loss: PixelLoss,
    pub use_feature: bool,
    pub use_adversarial: bool,
    pub disc_lr: f32,
    pub disc_width: usize,
}

impl SosrConfig {
    fn feature_on(&self) -> bool {
        self.use_feature && self.weights.beta > 0.0
    }

    fn adversarial_on(&self) -> bool {
        self.use_adversarial && self.weights.gamma > 0.0
    }
}

/// One row of the SoSR training log. Disabled terms are logged as 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SosrLogRow {
    pub iteration: usize,
    pub wmse: f32,
    pub feature: f32,
    pub adv_g: f32,
    pub adv_d: f32,
    pub total: f32,
}

#[derive(Clone, Debug)]
pub struct SosrOutcome {
    pub model: SrModel,
    pub discriminator: Discriminator,
    pub extractor: FeatureExtractor,
    pub log: Vec<SosrLogRow>,
}

/// Trains an SR model on patch samples. `observer` sees every log row and the
/// current model, and may stop training early with `ControlFlow::Break`.
pub fn train_sosr(
    samples: &[PatchSample],
    cfg: &SosrConfig,
    mut observer: impl FnMut(&SosrLogRow, &SrModel) -> ControlFlow<()>,
) -> Result<SosrOutcome, CoreError> {
    cfg.train.validate()?;
    cfg.weights.validate()?;
    check_dataset(samples, cfg.train.model.channels)?;

    let seed = cfg.train.model_seed();
    let mut model = build_sr_net(cfg.train.model, seed)?;
    let mut disc = build_discriminator(cfg.train.model.channels, cfg.disc_width, seed.wrapping_add(1));
    let extractor = build_feature_extractor(cfg.train.model.channels, seed.wrapping_add(2));
    let mut opt_g = Adam::new(cfg.train.adam, model.params());
    let mut opt_d = Adam::new(cfg.train.adam, disc.params());
    let mut sampler = EpochSampler::new(samples.len(), cfg.train.sampler_rng());
    let mut log = Vec::with_capacity(cfg.train.iterations);
    let w = cfg.weights;

    for iteration in 1..=cfg.train.iterations {
        let idx = sampler.next_batch(cfg.train.batch_size);
        let lr = cfg.train.lr_at_epoch(sampler.epoch());
        let batch = SosrBatch::from_samples(&gather(samples, &idx))?;

        let mut adv_d = 0.0;
        if cfg.adversarial_on() {
            let sr_value = model.infer(&batch.lr_up)?;
            let mut tape = Tape::new();
            let sr = tape.constant(sr_value);
            let hr = tape.constant(batch.hr.clone());
            let loss = discriminator_loss(&mut tape, &disc, sr, hr)?;
            adv_d = tape.value(loss).item();
            let grads = tape.backward(loss)?;
            disc.params_mut().zero_grad();
            disc.params_mut().accumulate(&grads);
            opt_d.step(disc.params_mut(), cfg.disc_lr);
        }

        let mut tape = Tape::new();
        tape.freeze(disc.params());
        let x = tape.constant(batch.lr_up.clone());
        let hr = tape.constant(batch.hr.clone());
        let sr = model.forward(&mut tape, x)?;
        let pixel = match cfg.pixel_loss {
            PixelLoss::Wmse => wmse(&mut tape, sr, hr, &batch.weights)?,
            PixelLoss::Mse => pixel_mse(&mut tape, sr, hr)?,
        };
        let feat = if cfg.feature_on() { Some(feature_loss(&mut tape, sr, hr, &extractor)?) } else { None };
        let adv = if cfg.adversarial_on() { Some(generator_adversarial_loss(&mut tape, &disc, sr)?) } else { None };
        let total = weighted_sum(&mut tape, &[(Some(pixel), w.alpha), (feat, w.beta), (adv, w.gamma)])?;
        let row = SosrLogRow {
            iteration,
            wmse: tape.value(pixel).item(),
            feature: feat.map_or(0.0, |v| tape.value(v).item()),
            adv_g: adv.map_or(0.0, |v| tape.value(v).item()),
            adv_d,
            total: tape.value(total).item(),
        };
        if !row.total.is_finite() {
            return Err(CoreError::NonFinite("SoSR loss"));
        }
        let grads = tape.backward(total)?;
        model.params_mut().zero_grad();
        model.params_mut().accumulate(&grads);
        opt_g.step(model.params_mut(), lr);

        log.push(row);
        if observer(&row, &model).is_break() {
            break;
        }
    }
    Ok(SosrOutcome { model, discriminator: disc, extractor, log })
}

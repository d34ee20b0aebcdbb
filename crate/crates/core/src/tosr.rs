//! Temporal-oriented siamese objective: two weight-shared SR passes on
//! consecutive frames coupled by warping the second output with the HR flow.

use alloc::vec::Vec;
use core::ops::ControlFlow;

use crate::error::CoreError;
use crate::flow::FlowField;
use crate::models::{build_sr_net, SrModel};
use crate::optim::Adam;
use crate::tape::{Tape, Var};
use crate::tensor::{ensure_same_shape, Tensor};
use crate::train::{check_dataset, gather, EpochSampler, PairBatch, PatchSample, TrainConfig};
use crate::warp::in_range_mask;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TosrWeights {
    pub alpha: f32,
    pub beta: f32,
    pub gamma: f32,
}

impl TosrWeights {
    /// Reconstruction 1, warp-SR 0.8, warp-HR 0.1.
    pub const DEFAULT: TosrWeights = TosrWeights { alpha: 1.0, beta: 0.8, gamma: 0.1 };
    /// Per-frame baseline without the warp terms.
    pub const NO_WARP: TosrWeights = TosrWeights { alpha: 1.0, beta: 0.0, gamma: 0.0 };

    pub fn validate(&self) -> Result<(), CoreError> {
        if [self.alpha, self.beta, self.gamma].iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(CoreError::InvalidArgument("ToSR loss weights must be finite and nonnegative"))
        }
    }
}

impl Default for TosrWeights {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// How warp losses treat pixels whose sample point fell outside the frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WarpBorder {
    /// Clamped samples count like any other pixel.
    #[default]
    Include,
    /// Only pixels whose sample point lies inside the frame are averaged.
    Exclude,
}

/// `m(a, warp(b, flows))`: mean squared difference between `a` and `b`
/// warped backward by one flow per image.
pub fn warp_consistency(tape: &mut Tape, a: Var, b: Var, flows: &[FlowField], border: WarpBorder) -> Result<Var, CoreError> {
    let warped = tape.bilinear_warp(b, flows)?;
    warp_loss(tape, a, warped, flows, border)
}

/// Mean squared difference between `reference` and an already warped frame.
pub fn warp_loss(tape: &mut Tape, reference: Var, warped: Var, flows: &[FlowField], border: WarpBorder) -> Result<Var, CoreError> {
    match border {
        WarpBorder::Include => tape.mse(reference, warped),
        WarpBorder::Exclude => masked_mse(tape, reference, warped, flows),
    }
}

fn masked_mse(tape: &mut Tape, a: Var, b: Var, flows: &[FlowField]) -> Result<Var, CoreError> {
    let s = tape.value(a).shape();
    ensure_same_shape("warp loss", s, tape.value(b).shape())?;
    let masks: Vec<Tensor> = flows.iter().map(in_range_mask).collect();
    let mask = Tensor::from_fn(s, |n, _, y, x| masks[if masks.len() == 1 { 0 } else { n }].data()[y * s.w + x]);
    let count = mask.sum_f64().max(1.0);
    let m = tape.constant(mask);
    let d = tape.sub(a, b)?;
    let sq = tape.mul(d, d)?;
    let kept = tape.mul(sq, m)?;
    let total = tape.sum(kept);
    Ok(tape.scale(total, (1.0 / count) as f32))
}

#[derive(Clone, Copy, Debug)]
pub struct TosrTerms {
    pub sr_t: Var,
    pub sr_t1: Var,
    pub l_sr: Var,
    pub l_warp_sr: Var,
    pub l_warp_hr: Var,
}

/// Builds the three loss terms for a batch of frame pairs on `tape`.
///
/// Both SR passes read the same parameter set, so their gradients land in
/// one slot per parameter.
pub fn tosr_losses(tape: &mut Tape, model: &SrModel, pair: &PairBatch, border: WarpBorder) -> Result<TosrTerms, CoreError> {
    pair.validate()?;
    let x_t = tape.constant(pair.lr_up_t.clone());
    let x_t1 = tape.constant(pair.lr_up_t1.clone());
    let hr_t = tape.constant(pair.hr_t.clone());
    let hr_t1 = tape.constant(pair.hr_t1.clone());
    let sr_t = model.forward(tape, x_t)?;
    let sr_t1 = model.forward(tape, x_t1)?;
    let m_t = tape.mse(hr_t, sr_t)?;
    let m_t1 = tape.mse(hr_t1, sr_t1)?;
    let l_sr = tape.add(m_t, m_t1)?;
    let warped = tape.bilinear_warp(sr_t1, &pair.flows)?;
    let l_warp_sr = warp_loss(tape, sr_t, warped, &pair.flows, border)?;
    let l_warp_hr = warp_loss(tape, hr_t, warped, &pair.flows, border)?;
    Ok(TosrTerms { sr_t, sr_t1, l_sr, l_warp_sr, l_warp_hr })
}

/// `(l_sr, l_warp_sr, l_warp_hr)` as plain numbers.
pub fn tosr_loss_values(model: &SrModel, pair: &PairBatch, border: WarpBorder) -> Result<(f32, f32, f32), CoreError> {
    let mut tape = Tape::new();
    let t = tosr_losses(&mut tape, model, pair, border)?;
    Ok((tape.value(t.l_sr).item(), tape.value(t.l_warp_sr).item(), tape.value(t.l_warp_hr).item()))
}

pub fn tosr_total(l_sr: f32, l_warp_sr: f32, l_warp_hr: f32, w: TosrWeights) -> f32 {
    w.alpha * l_sr + w.beta * l_warp_sr + w.gamma * l_warp_hr
}

/// Weighted sum of the terms on the tape; zero-weight terms are left out of the graph.
pub fn tosr_total_var(tape: &mut Tape, t: &TosrTerms, w: TosrWeights) -> Result<Var, CoreError> {
    let mut acc = tape.scale(t.l_sr, w.alpha);
    for (term, weight) in [(t.l_warp_sr, w.beta), (t.l_warp_hr, w.gamma)] {
        if weight != 0.0 {
            let scaled = tape.scale(term, weight);
            acc = tape.add(acc, scaled)?;
        }
    }
    Ok(acc)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TosrConfig {
    pub train: TrainConfig,
    pub weights: TosrWeights,
    pub border: WarpBorder,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TosrLogRow {
    pub iteration: usize,
    pub l_sr: f32,
    pub l_warp_sr: f32,
    pub l_warp_hr: f32,
    pub total: f32,
    pub lr: f32,
}

#[derive(Clone, Debug)]
pub struct TosrOutcome {
    pub model: SrModel,
    pub log: Vec<TosrLogRow>,
}

/// Trains one shared SR model on frame pairs. `observer` sees every log row
/// and the current model, and may stop training early.
pub fn train_tosr(
    samples: &[PatchSample],
    cfg: &TosrConfig,
    mut observer: impl FnMut(&TosrLogRow, &SrModel) -> ControlFlow<()>,
) -> Result<TosrOutcome, CoreError> {
    cfg.train.validate()?;
    cfg.weights.validate()?;
    check_dataset(samples, cfg.train.model.channels)?;

    let mut model = build_sr_net(cfg.train.model, cfg.train.model_seed())?;
    let mut opt = Adam::new(cfg.train.adam, model.params());
    let mut sampler = EpochSampler::new(samples.len(), cfg.train.sampler_rng());
    let mut log = Vec::with_capacity(cfg.train.iterations);

    for iteration in 1..=cfg.train.iterations {
        let idx = sampler.next_batch(cfg.train.batch_size);
        let lr = cfg.train.lr_at_epoch(sampler.epoch());
        let batch = PairBatch::from_samples(&gather(samples, &idx))?;

        let mut tape = Tape::new();
        let terms = tosr_losses(&mut tape, &model, &batch, cfg.border)?;
        let total = tosr_total_var(&mut tape, &terms, cfg.weights)?;
        let row = TosrLogRow {
            iteration,
            l_sr: tape.value(terms.l_sr).item(),
            l_warp_sr: tape.value(terms.l_warp_sr).item(),
            l_warp_hr: tape.value(terms.l_warp_hr).item(),
            total: tape.value(total).item(),
            lr,
        };
        if !row.total.is_finite() {
            return Err(CoreError::NonFinite("ToSR loss"));
        }
        let grads = tape.backward(total)?;
        model.params_mut().zero_grad();
        model.params_mut().accumulate(&grads);
        opt.step(model.params_mut(), lr);

        log.push(row);
        if observer(&row, &model).is_break() {
            break;
        }
    }
    Ok(TosrOutcome { model, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::SrConfig;
    use crate::tensor::Shape;
    use alloc::vec;

    fn identity_model(c: usize) -> SrModel {
        // last layer is zero-initialised, so the residual net starts as the identity
        build_sr_net(SrConfig::new(2, 2, c), 0).unwrap()
    }

    fn frame(values: &[f32], h: usize, w: usize) -> Tensor {
        Tensor::from_vec(Shape::new(1, 1, h, w), values.to_vec()).unwrap()
    }

    fn pair(hr_t: Tensor, hr_t1: Tensor, lr_t: Tensor, lr_t1: Tensor, flow: FlowField) -> PairBatch {
        PairBatch { hr_t, hr_t1, lr_up_t: lr_t, lr_up_t1: lr_t1, flows: vec![flow] }
    }

    #[test]
    fn perfect_static_pair_is_a_fixed_point() {
        let hr = frame(&[0.1, 0.5, 0.9, 0.3, 0.2, 0.8, 0.4, 0.6, 0.7], 3, 3);
        let p = pair(hr.clone(), hr.clone(), hr.clone(), hr, FlowField::zeros(3, 3));
        for border in [WarpBorder::Include, WarpBorder::Exclude] {
            let (a, b, c) = tosr_loss_values(&identity_model(1), &p, border).unwrap();
            assert_eq!((a, b, c), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn warp_sr_hand_case() {
        // identity model: outputs equal the inputs, which differ by 1 at one pixel
        let a = frame(&[0.0, 0.0, 0.0, 0.0], 2, 2);
        let b = frame(&[0.0, 1.0, 0.0, 0.0], 2, 2);
        let p = pair(a.clone(), b.clone(), a, b, FlowField::zeros(2, 2));
        let (_, warp_sr, warp_hr) = tosr_loss_values(&identity_model(1), &p, WarpBorder::Include).unwrap();
        assert_eq!(warp_sr, 0.25);
        assert_eq!(warp_hr, 0.25);
    }

    #[test]
    fn identity_model_l_sr_is_bicubic_error() {
        let hr_t = frame(&[0.2, 0.4, 0.6, 0.8], 2, 2);
        let hr_t1 = frame(&[0.3, 0.5, 0.6, 0.7], 2, 2);
        let lr_t = frame(&[0.25, 0.35, 0.65, 0.75], 2, 2);
        let lr_t1 = frame(&[0.3, 0.3, 0.3, 0.3], 2, 2);
        let mse = |x: &Tensor, y: &Tensor| x.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f32>() / 4.0;
        let want = mse(&hr_t, &lr_t) + mse(&hr_t1, &lr_t1);
        let p = pair(hr_t, hr_t1, lr_t, lr_t1, FlowField::zeros(2, 2));
        let (l_sr, _, _) = tosr_loss_values(&identity_model(1), &p, WarpBorder::Include).unwrap();
        assert!((l_sr - want).abs() < 1e-7);
    }

    #[test]
    fn exact_flow_on_translating_content() {
        // hr_t1 is hr_t shifted right by one pixel: hr_t(p) = hr_t1(p + (1, 0))
        let w = 6;
        let row: Vec<f32> = (0..w + 1).map(|i| (i * i) as f32 * 0.01).collect();
        let hr_t = Tensor::from_fn(Shape::new(1, 1, 2, w), |_, _, _, x| row[x + 1]);
        let hr_t1 = Tensor::from_fn(Shape::new(1, 1, 2, w), |_, _, _, x| if x == 0 { 0.0 } else { row[x] });
        let p = pair(hr_t.clone(), hr_t1.clone(), hr_t, hr_t1, FlowField::uniform(w, 2, 1.0, 0.0));
        let (_, _, warp_hr) = tosr_loss_values(&identity_model(1), &p, WarpBorder::Exclude).unwrap();
        assert_eq!(warp_hr, 0.0);
        let (_, _, unmasked) = tosr_loss_values(&identity_model(1), &p, WarpBorder::Include).unwrap();
        assert!(unmasked > 0.0);
    }

    #[test]
    fn total_weighting() {
        let w = TosrWeights::DEFAULT;
        assert_eq!(tosr_total(0.0, 0.0, 0.0, w), 0.0);
        assert!((tosr_total(1.0, 1.0, 1.0, w) - 1.9).abs() < 1e-6);
        assert_eq!(tosr_total(0.7, 5.0, 9.0, TosrWeights::NO_WARP), 0.7);
        assert!(TosrWeights { gamma: -0.1, ..w }.validate().is_err());
    }

    #[test]
    fn misaligned_pair_rejected() {
        let a = Tensor::zeros(Shape::new(1, 1, 2, 2));
        let p = pair(a.clone(), a.clone(), a, Tensor::zeros(Shape::new(1, 1, 2, 3)), FlowField::zeros(2, 2));
        assert!(tosr_loss_values(&identity_model(1), &p, WarpBorder::Include).is_err());
    }

    #[test]
    fn symmetric_pair_doubles_single_frame_gradient() {
        let mut model = build_sr_net(SrConfig::new(3, 4, 1), 5).unwrap();
        // give the last layer nonzero weights so every parameter sees gradient
        let last = model.params().len() - 2;
        for (i, v) in model.params_mut().get_mut(last).value.data_mut().iter_mut().enumerate() {
            *v = 0.01 * ((i % 7) as f32 - 3.0);
        }
        let hr = Tensor::from_fn(Shape::new(1, 1, 6, 6), |_, _, y, x| ((x * 3 + y * 5) % 7) as f32 / 7.0);
        let lr = Tensor::from_fn(Shape::new(1, 1, 6, 6), |_, _, y, x| ((x + y) % 4) as f32 / 4.0);
        let p = pair(hr.clone(), hr.clone(), lr.clone(), lr.clone(), FlowField::zeros(6, 6));

        let mut tape = Tape::new();
        let t = tosr_losses(&mut tape, &model, &p, WarpBorder::Include).unwrap();
        let g2 = tape.backward(t.l_sr).unwrap();
        let collect = |model: &mut SrModel, g: &crate::tape::Gradients| -> Vec<Tensor> {
            model.params_mut().zero_grad();
            model.params_mut().accumulate(g);
            model.params().iter().map(|p| p.grad.clone()).collect()
        };
        let doubled = collect(&mut model, &g2);

        let mut tape = Tape::new();
        let x = tape.constant(lr);
        let h = tape.constant(hr);
        let sr = model.forward(&mut tape, x).unwrap();
        let l = tape.mse(h, sr).unwrap();
        let g1 = tape.backward(l).unwrap();
        let single = collect(&mut model, &g1);

        assert!(single.iter().all(|g| g.data().iter().any(|&v| v != 0.0)));
        for (a, b) in doubled.iter().zip(&single) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*x, 2.0 * y);
            }
        }
    }
}

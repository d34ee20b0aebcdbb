use std::ops::ControlFlow;

use vsrkit_core::dataset::{clip_samples, PrepOptions};
use vsrkit_core::models::SrConfig;
use vsrkit_core::optim::AdamConfig;
use vsrkit_core::patches::RankOptions;
use vsrkit_core::sosr::{train_sosr, PixelLoss, SosrConfig, SosrWeights};
use vsrkit_core::synth::{make_synthetic_dataset, SynthConfig, SynthKind};
use vsrkit_core::tosr::{train_tosr, TosrConfig, TosrWeights, WarpBorder};
use vsrkit_core::train::{PatchSample, TrainConfig};
use vsrkit_core::CoreError;

fn toy_samples(kind: SynthKind, count: usize) -> Vec<PatchSample> {
    let mut cfg = SynthConfig::new(kind);
    cfg.width = 32;
    cfg.height = 32;
    cfg.block = 10;
    cfg.frames = 5;
    let opts = PrepOptions { scale: 4, rank: RankOptions { patch: 16, top_k: 2, stride: 4, min_variance: 0.0 } };
    let mut out = Vec::new();
    for clip in make_synthetic_dataset(&cfg, 17, 6).unwrap() {
        out.extend(clip_samples(&clip.frames, &clip.flows, opts).unwrap().into_iter().map(|(_, s)| s));
    }
    out.truncate(count);
    assert_eq!(out.len(), count);
    out
}

fn train_cfg(iterations: usize) -> TrainConfig {
    TrainConfig {
        seed: 3,
        iterations,
        batch_size: 4,
        lr: 1e-3,
        lr_decay_every_epochs: 0,
        lr_decay_factor: 0.1,
        adam: AdamConfig::default(),
        model: SrConfig::new(3, 6, 1),
    }
}

fn sosr_cfg(iterations: usize, weights: SosrWeights) -> SosrConfig {
    SosrConfig { train: train_cfg(iterations), weights, pixel_loss: PixelLoss::Wmse, use_feature: true, use_adversarial: true, disc_lr: 1e-3, disc_width: 4 }
}

#[test]
fn sosr_generator_loss_falls() {
    let samples = toy_samples(SynthKind::MovingForeground, 32);
    // one batch is the whole set, so successive losses differ only through training
    let mut cfg = sosr_cfg(200, SosrWeights::DEFAULT);
    cfg.train.batch_size = 32;
    cfg.disc_lr = 1e-4;
    let out = train_sosr(&samples, &cfg, |_, _| ControlFlow::Continue(())).unwrap();
    assert_eq!(out.log.len(), 200);
    let (first, last) = (out.log[0].total, out.log[199].total);
    assert!(last < first, "{first} -> {last}");
    assert!(out.log.iter().all(|r| r.adv_d > 0.0 && r.feature > 0.0));
}

#[test]
fn sosr_is_deterministic() {
    let samples = toy_samples(SynthKind::MovingForeground, 12);
    let cfg = sosr_cfg(15, SosrWeights::DEFAULT);
    let a = train_sosr(&samples, &cfg, |_, _| ControlFlow::Continue(())).unwrap();
    let b = train_sosr(&samples, &cfg, |_, _| ControlFlow::Continue(())).unwrap();
    assert_eq!(a.log, b.log);
    for (p, q) in a.model.params().iter().zip(b.model.params().iter()) {
        assert_eq!(p.value, q.value);
    }
}

#[test]
fn zero_gamma_leaves_discriminator_alone() {
    let samples = toy_samples(SynthKind::MovingForeground, 8);
    let weights = SosrWeights { gamma: 0.0, ..SosrWeights::DEFAULT };
    let before = vsrkit_core::models::build_discriminator(1, 4, 3 + 1);
    let out = train_sosr(&samples, &sosr_cfg(10, weights), |_, _| ControlFlow::Continue(())).unwrap();
    for (p, q) in out.discriminator.params().iter().zip(before.params().iter()) {
        assert_eq!(p.value, q.value);
    }
    assert!(out.log.iter().all(|r| r.adv_g == 0.0 && r.adv_d == 0.0));
}

#[test]
fn observer_can_stop_training() {
    let samples = toy_samples(SynthKind::TranslatingTexture, 8);
    let cfg = TosrConfig { train: train_cfg(50), weights: TosrWeights::DEFAULT, border: WarpBorder::Include };
    let out = train_tosr(&samples, &cfg, |row, _| if row.iteration == 7 { ControlFlow::Break(()) } else { ControlFlow::Continue(()) }).unwrap();
    assert_eq!(out.log.len(), 7);
}

#[test]
fn tosr_is_deterministic_and_follows_schedule() {
    let samples = toy_samples(SynthKind::TranslatingTexture, 8);
    let mut train = train_cfg(12);
    train.lr_decay_every_epochs = 1;
    train.batch_size = 4;
    let cfg = TosrConfig { train, weights: TosrWeights::DEFAULT, border: WarpBorder::Include };
    let a = train_tosr(&samples, &cfg, |_, _| ControlFlow::Continue(())).unwrap();
    let b = train_tosr(&samples, &cfg, |_, _| ControlFlow::Continue(())).unwrap();
    assert_eq!(a.log, b.log);
    // 8 samples, batch 4: two iterations per epoch
    let lrs: Vec<f32> = a.log.iter().map(|r| r.lr).collect();
    assert_eq!(lrs[0], 1e-3);
    assert_eq!(lrs[1], 1e-3);
    assert!((lrs[2] - 1e-4).abs() < 1e-10);
    assert!(a.log.iter().all(|r| r.l_sr > 0.0 && r.l_warp_hr >= 0.0));
}

#[test]
fn empty_dataset_rejected() {
    let cfg = TosrConfig { train: train_cfg(5), weights: TosrWeights::DEFAULT, border: WarpBorder::Include };
    let mut steps = 0;
    let err = train_tosr(&[], &cfg, |_, _| {
        steps += 1;
        ControlFlow::Continue(())
    });
    assert!(matches!(err, Err(CoreError::Empty(_))));
    assert_eq!(steps, 0);
    assert!(train_sosr(&[], &sosr_cfg(5, SosrWeights::DEFAULT), |_, _| ControlFlow::Continue(())).is_err());
}

//! The file-level stages behind the command-line subcommands.

use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use vsrkit_core::dataset::degrade_clip;
use vsrkit_core::flow::{to_luma, HornSchunck};
use vsrkit_core::metrics::{evaluate_clip, temporal_profile, ClipReport};
use vsrkit_core::models::SrModel;
use vsrkit_core::resample::bicubic_resize;
use vsrkit_core::sosr::train_sosr;
use vsrkit_core::tosr::train_tosr;
use vsrkit_core::{FlowField, Tensor};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{RunConfig, Trainer};
use crate::error::{self, Error, Result};
use crate::frames::{find_sequences, save_frame, write_sequence, FrameSequence};
use crate::prep::{load_sequence_flows, sequence_flows, FlowSource, Manifest};
use crate::report::{emit_report, frames_csv, sosr_log_csv, tosr_log_csv};

pub const FINAL_CHECKPOINT: &str = "model.ckpt";
pub const TRAIN_LOG: &str = "train_log.csv";

pub fn checkpoint_name(iteration: usize) -> String {
    format!("checkpoint_{iteration:06}.ckpt")
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub samples: usize,
    pub iterations: usize,
    pub final_total: Option<f32>,
    pub checkpoint: PathBuf,
}

/// Image channel count shared by every sequence of a manifest.
pub fn manifest_channels(m: &Manifest, path: &Path) -> Result<usize> {
    let c = m.sequences.first().map(|s| s.channels).ok_or_else(|| Error::format(path, "manifest lists no sequences"))?;
    if m.sequences.iter().any(|s| s.channels != c) {
        return Err(Error::format(path, "manifest mixes grayscale and colour sequences"));
    }
    Ok(c)
}

/// Trains on the manifest's patches, writing the log, any intermediate
/// checkpoints and the final checkpoint into `cfg.out`.
pub fn run_training(cfg: &RunConfig) -> Result<TrainSummary> {
    let manifest = Manifest::load(&cfg.manifest)?;
    let channels = manifest_channels(&manifest, &cfg.manifest)?;
    let samples = manifest.load_samples()?;
    if samples.is_empty() {
        return Err(Error::format(&cfg.manifest, "manifest lists no patches"));
    }
    error::create_dir(&cfg.out)?;
    let every = cfg.checkpoint_every;
    let mut ckpt_err = None;
    let mut observe = |iteration: usize, model: &SrModel| {
        if every > 0 && iteration % every == 0 {
            if let Err(e) = save_checkpoint(&cfg.out.join(checkpoint_name(iteration)), model) {
                ckpt_err = Some(e);
                return ControlFlow::Break(());
            }
        }
        ControlFlow::Continue(())
    };
    let (model, log, final_total) = match cfg.trainer {
        Trainer::Sosr => {
            let mut run = cfg.sosr;
            run.train.model.channels = channels;
            let out = train_sosr(&samples, &run, |r, m| observe(r.iteration, m))?;
            let last = out.log.last().map(|r| r.total);
            (out.model, sosr_log_csv(&out.log), last)
        }
        Trainer::Tosr => {
            let mut run = cfg.tosr;
            run.train.model.channels = channels;
            let out = train_tosr(&samples, &run, |r, m| observe(r.iteration, m))?;
            let last = out.log.last().map(|r| r.total);
            (out.model, tosr_log_csv(&out.log), last)
        }
    };
    if let Some(e) = ckpt_err {
        return Err(e);
    }
    error::write(&cfg.out.join(TRAIN_LOG), log.as_bytes())?;
    let checkpoint = cfg.out.join(FINAL_CHECKPOINT);
    save_checkpoint(&checkpoint, &model)?;
    Ok(TrainSummary { samples: samples.len(), iterations: cfg.train.iterations, final_total, checkpoint })
}

/// Model input for each frame: HR frames are degraded by `scale`, LR frames
/// are bicubic-upsampled by `scale`.
pub fn model_inputs(frames: &[Tensor], scale: usize, lr_input: bool) -> Result<Vec<Tensor>> {
    if lr_input {
        Ok(frames
            .iter()
            .map(|f| {
                let s = f.shape();
                bicubic_resize(f, s.h * scale, s.w * scale)
            })
            .collect::<Result<_, _>>()?)
    } else {
        Ok(degrade_clip(frames, scale)?)
    }
}

pub fn super_resolve(model: &SrModel, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
    Ok(inputs.iter().map(|x| model.infer(x)).collect::<Result<_, _>>()?)
}

/// Runs a checkpoint over one frame directory and writes the SR frames to `out`.
pub fn run_infer(checkpoint: &Path, input: &Path, out: &Path, scale: usize, lr_input: bool) -> Result<usize> {
    let model = load_checkpoint(checkpoint)?;
    let frames = FrameSequence::open(input)?.load()?;
    let sr = super_resolve(&model, &model_inputs(&frames, scale, lr_input)?)?;
    write_sequence(out, &sr)?;
    Ok(sr.len())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProfileColor {
    Color,
    Luma,
}

pub fn profile_image(frames: &[Tensor], row: usize, color: ProfileColor) -> Result<Tensor> {
    Ok(match color {
        ProfileColor::Color => temporal_profile(frames, row)?,
        ProfileColor::Luma => {
            let luma: Vec<Tensor> = frames.iter().map(to_luma).collect::<Result<_, _>>()?;
            temporal_profile(&luma, row)?
        }
    })
}

/// Evaluation flow for a reference sequence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EvalFlow {
    /// Stored `.flo` files when the sequence has a `flow` directory, estimated otherwise.
    Auto(HornSchunck),
    Source(FlowSource),
}

fn eval_flows(seq: &FrameSequence, hr: &[Tensor], flow: EvalFlow) -> Result<Vec<FlowField>> {
    match flow {
        EvalFlow::Auto(p) if !seq.dir.join("flow").is_dir() => sequence_flows(seq, hr, FlowSource::Estimate(p)),
        EvalFlow::Auto(_) => load_sequence_flows(seq),
        EvalFlow::Source(s) => sequence_flows(seq, hr, s),
    }
}

/// Where SR frames come from.
#[derive(Clone, Debug)]
pub enum SrSource {
    Checkpoint { path: PathBuf, scale: usize },
    /// A root with one SR frame directory per reference sequence, matched by name.
    Frames(PathBuf),
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub sr: SrSource,
    pub flow: EvalFlow,
    pub peak: f64,
    /// Profile row and colour mode; profiles are skipped when `None`.
    pub profile: Option<(Option<usize>, ProfileColor)>,
}

pub const REPORT_FILE: &str = "report.csv";
pub const FRAMES_FILE: &str = "frames.csv";

/// Scores every sequence under `reference` and writes `report.csv`,
/// `frames.csv` and optional `profiles/<clip>.png` into `out`.
pub fn run_eval(reference: &Path, out: &Path, opts: &EvalOptions) -> Result<Vec<ClipReport>> {
    let model = match &opts.sr {
        SrSource::Checkpoint { path, scale } => Some((load_checkpoint(path)?, *scale)),
        SrSource::Frames(_) => None,
    };
    let mut reports = Vec::new();
    for seq in find_sequences(reference)? {
        let hr = seq.load()?;
        let flows = eval_flows(&seq, &hr, opts.flow)?;
        let sr = match (&model, &opts.sr) {
            (Some((m, scale)), _) => super_resolve(m, &model_inputs(&hr, *scale, false)?)?,
            (None, SrSource::Frames(root)) => FrameSequence::open(&root.join(seq.name()))?.load()?,
            (None, SrSource::Checkpoint { .. }) => unreachable!(),
        };
        let mut report = evaluate_clip(seq.name(), &sr, &hr, &flows, opts.peak)?;
        if let Some((row, color)) = opts.profile {
            let row = row.unwrap_or(seq.height / 2);
            let rel = format!("profiles/{}.png", seq.name());
            save_frame(&out.join(&rel), &profile_image(&sr, row, color)?)?;
            report.profile = Some(rel);
        }
        reports.push(report);
    }
    emit_report(&reports, &out.join(REPORT_FILE))?;
    error::write(&out.join(FRAMES_FILE), frames_csv(&reports)?.as_bytes())?;
    Ok(reports)
}

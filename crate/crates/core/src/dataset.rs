//! Cutting aligned training samples out of a clip.

use alloc::vec::Vec;

use crate::error::CoreError;
use crate::flow::{weight_map, FlowField};
use crate::patches::{rank_patches, PatchRecord, RankOptions};
use crate::resample::degrade;
use crate::tensor::{ensure_same_shape, Tensor};
use crate::train::PatchSample;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrepOptions {
    pub scale: usize,
    pub rank: RankOptions,
}

impl Default for PrepOptions {
    fn default() -> Self {
        PrepOptions { scale: 4, rank: RankOptions::default() }
    }
}

/// HR frames with their degraded counterparts, upsampled back to HR size.
pub fn degrade_clip(frames: &[Tensor], scale: usize) -> Result<Vec<Tensor>, CoreError> {
    frames.iter().map(|f| degrade(f, scale).map(|(_, up)| up)).collect()
}

/// For every consecutive pair `(t, t+1)`, ranks windows of frame `t` by the
/// magnitude of `flows[t]` and cuts the HR, upsampled-LR and flow patches of
/// both frames at each selected window.
pub fn clip_samples(frames: &[Tensor], flows: &[FlowField], opts: PrepOptions) -> Result<Vec<(PatchRecord, PatchSample)>, CoreError> {
    if frames.len() < 2 {
        return Err(CoreError::Empty("clip needs at least two frames"));
    }
    if flows.len() != frames.len() - 1 {
        return Err(CoreError::DimMismatch { op: "clip_samples", dim: "flow count", expected: frames.len() - 1, actual: flows.len() });
    }
    let s = frames[0].shape();
    for f in frames {
        ensure_same_shape("clip_samples", s, f.shape())?;
    }
    let ups = degrade_clip(frames, opts.scale)?;
    let mut out = Vec::new();
    for (t, flow) in flows.iter().enumerate() {
        let records = rank_patches(&frames[t], &weight_map(flow), t, opts.rank)?;
        for r in records {
            let cut = |img: &Tensor| img.crop(r.x, r.y, r.size, r.size);
            let sample = PatchSample {
                hr_t: cut(&frames[t])?,
                hr_t1: cut(&frames[t + 1])?,
                lr_up_t: cut(&ups[t])?,
                lr_up_t1: cut(&ups[t + 1])?,
                flow: flow.crop(r.x, r.y, r.size, r.size)?,
            };
            out.push((r, sample));
        }
    }
    Ok(out)
}

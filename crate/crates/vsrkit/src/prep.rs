//! Synthetic dataset directories, patch files and the dataset manifest.
//!
//! A video root holds one subdirectory per sequence with frames named
//! `frame_NNNN.png`. Synthetic clips add ground truth beside their frames:
//! `flow/flow_NNNN.flo` (frame `N` to `N + 1`) and, for moving-foreground
//! clips, `mask/mask_NNNN.png`.
//!
//! `build_manifest` writes into its output directory:
//!
//! ```text
//! manifest.txt
//! flows/<sequence>/flow_NNNN.flo
//! patches/<sequence>/patch_NNNN_KK.bin
//! ```
//!
//! `manifest.txt` is line-oriented, space-separated, with paths relative to
//! the manifest and SHA-256 digests in lowercase hex:
//!
//! ```text
//! vsrkit-manifest 1
//! options <scale> <patch> <top_k> <stride> <min_variance> <flow-source>
//! sequence <name> <frames> <width> <height> <channels>
//! flow <sequence> <t> <path> <sha256>
//! patch <sequence> <t> <x> <y> <size> <score> <path> <sha256>
//! ```
//!
//! Patch files are little-endian: magic `VSRP`, version (u32), then the
//! HR, HR-next, upsampled-LR and upsampled-LR-next tensors (four u32
//! dimensions followed by f32 values each), then the flow width and height
//! (u32) with its `u` and `v` planes.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use vsrkit_core::dataset::{clip_samples, PrepOptions};
use vsrkit_core::flow::{estimate_flow, HornSchunck};
use vsrkit_core::patches::{PatchRecord, RankOptions};
use vsrkit_core::synth::{make_synthetic_dataset, SynthConfig};
use vsrkit_core::train::PatchSample;
use vsrkit_core::{FlowField, Tensor};

use crate::bytes::{Reader, Writer};
use crate::error::{self, Error, Result};
use crate::flo;
use crate::frames::{find_sequences, save_frame, write_sequence, FrameSequence};

pub fn flow_name(t: usize) -> String {
    format!("flow_{t:04}.flo")
}

pub fn mask_name(t: usize) -> String {
    format!("mask_{t:04}.png")
}

pub fn clip_dir_name(i: usize) -> String {
    format!("clip_{i:03}")
}

/// Generates `count` clips and writes them under `root`; returns the clip directories.
pub fn write_synthetic(root: &Path, cfg: &SynthConfig, seed: u64, count: usize) -> Result<Vec<PathBuf>> {
    let clips = make_synthetic_dataset(cfg, seed, count)?;
    let mut dirs = Vec::with_capacity(clips.len());
    for (i, clip) in clips.iter().enumerate() {
        let dir = root.join(clip_dir_name(i));
        write_sequence(&dir, &clip.frames)?;
        for (t, f) in clip.flows.iter().enumerate() {
            flo::write(&dir.join("flow").join(flow_name(t)), f)?;
        }
        if let Some(masks) = &clip.masks {
            for (t, m) in masks.iter().enumerate() {
                save_frame(&dir.join("mask").join(mask_name(t)), m)?;
            }
        }
        dirs.push(dir);
    }
    Ok(dirs)
}

/// Where per-pair flow comes from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FlowSource {
    Estimate(HornSchunck),
    /// `flow/flow_NNNN.flo` stored beside the frames.
    GroundTruth,
}

impl FlowSource {
    fn name(&self) -> &'static str {
        match self {
            FlowSource::Estimate(_) => "estimate",
            FlowSource::GroundTruth => "ground-truth",
        }
    }
}

/// Loads the `n - 1` stored flows of a sequence, checking count and size.
pub fn load_sequence_flows(seq: &FrameSequence) -> Result<Vec<FlowField>> {
    let dir = seq.dir.join("flow");
    (0..seq.len().saturating_sub(1))
        .map(|t| {
            let path = dir.join(flow_name(t));
            let f = flo::read(&path)?;
            if (f.width(), f.height()) != (seq.width, seq.height) {
                return Err(Error::format(&path, format!("flow is {}x{}, frames are {}x{}", f.width(), f.height(), seq.width, seq.height)));
            }
            Ok(f)
        })
        .collect()
}

pub fn sequence_flows(seq: &FrameSequence, frames: &[Tensor], source: FlowSource) -> Result<Vec<FlowField>> {
    match source {
        FlowSource::GroundTruth => load_sequence_flows(seq),
        FlowSource::Estimate(params) => Ok(frames.windows(2).map(|p| estimate_flow(&p[0], &p[1], params)).collect::<Result<_, _>>()?),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ManifestOptions {
    pub prep: PrepOptions,
    pub flow: FlowSource,
    /// Sequences processed concurrently; 1 is the reference setting.
    pub threads: usize,
}

impl Default for ManifestOptions {
    fn default() -> Self {
        ManifestOptions { prep: PrepOptions::default(), flow: FlowSource::Estimate(HornSchunck::default()), threads: 1 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceEntry {
    pub name: String,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FileRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowEntry {
    pub sequence: String,
    pub t: usize,
    pub file: FileRef,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchEntry {
    pub sequence: String,
    pub record: PatchRecord,
    pub file: FileRef,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    /// Directory the entry paths are relative to.
    pub root: PathBuf,
    pub scale: usize,
    pub rank: RankOptions,
    pub flow_source: String,
    pub sequences: Vec<SequenceEntry>,
    pub flows: Vec<FlowEntry>,
    pub patches: Vec<PatchEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.txt";
const PATCH_MAGIC: &[u8; 4] = b"VSRP";
const PATCH_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn encode_patch(s: &PatchSample) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(PATCH_MAGIC);
    w.u32(PATCH_VERSION);
    for t in [&s.hr_t, &s.hr_t1, &s.lr_up_t, &s.lr_up_t1] {
        w.tensor(t);
    }
    w.dim(s.flow.width());
    w.dim(s.flow.height());
    w.f32s(s.flow.u());
    w.f32s(s.flow.v());
    w.0
}

pub fn decode_patch(bytes: &[u8]) -> Result<PatchSample, String> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != PATCH_MAGIC {
        return Err("not a patch file".into());
    }
    if r.u32()? != PATCH_VERSION {
        return Err("unsupported patch version".into());
    }
    let (hr_t, hr_t1, lr_up_t, lr_up_t1) = (r.tensor()?, r.tensor()?, r.tensor()?, r.tensor()?);
    let (w, h) = (r.dim()?, r.dim()?);
    let n = w.checked_mul(h).ok_or("flow too large")?;
    let (u, v) = (r.f32s(n)?, r.f32s(n)?);
    r.finish()?;
    let flow = FlowField::new(w, h, u, v).map_err(|e| e.to_string())?;
    let s = PatchSample { hr_t, hr_t1, lr_up_t, lr_up_t1, flow };
    s.validate().map_err(|e| e.to_string())?;
    Ok(s)
}

struct SequenceOutput {
    entry: SequenceEntry,
    flows: Vec<FlowEntry>,
    patches: Vec<PatchEntry>,
}

fn write_hashed(out: &Path, rel: String, bytes: &[u8]) -> Result<FileRef> {
    error::write(&out.join(&rel), bytes)?;
    Ok(FileRef { path: rel, sha256: sha256_hex(bytes) })
}

fn process_sequence(seq: &FrameSequence, out: &Path, opts: &ManifestOptions) -> Result<SequenceOutput> {
    let name = seq.name();
    if name.is_empty() || name.chars().any(char::is_whitespace) {
        return Err(Error::format(&seq.dir, "sequence directory names must be non-empty and contain no whitespace"));
    }
    let frames = seq.load()?;
    if frames.len() < 2 {
        return Err(Error::format(&seq.dir, "sequence needs at least two frames"));
    }
    let flows = sequence_flows(seq, &frames, opts.flow)?;
    let mut flow_entries = Vec::with_capacity(flows.len());
    for (t, f) in flows.iter().enumerate() {
        let file = write_hashed(out, format!("flows/{name}/{}", flow_name(t)), &flo::encode(f))?;
        flow_entries.push(FlowEntry { sequence: name.clone(), t, file });
    }
    let mut patches = Vec::new();
    let mut k = 0;
    let mut last_t = usize::MAX;
    for (record, sample) in clip_samples(&frames, &flows, opts.prep)? {
        if record.frame != last_t {
            (last_t, k) = (record.frame, 0);
        }
        let file = write_hashed(out, format!("patches/{name}/patch_{:04}_{k:02}.bin", record.frame), &encode_patch(&sample))?;
        patches.push(PatchEntry { sequence: name.clone(), record, file });
        k += 1;
    }
    let entry = SequenceEntry { name, frames: frames.len(), width: seq.width, height: seq.height, channels: frames[0].shape().c };
    Ok(SequenceOutput { entry, flows: flow_entries, patches })
}

/// Computes flows and ranked patches for every sequence under `video_root`
/// and writes them with `manifest.txt` into `out`.
pub fn build_manifest(video_root: &Path, out: &Path, opts: &ManifestOptions) -> Result<Manifest> {
    let seqs = find_sequences(video_root)?;
    let threads = opts.threads.max(1).min(seqs.len());
    let results: Vec<Result<SequenceOutput>> = if threads == 1 {
        seqs.iter().map(|s| process_sequence(s, out, opts)).collect()
    } else {
        let mut slots: Vec<Option<Result<SequenceOutput>>> = (0..seqs.len()).map(|_| None).collect();
        let chunk = seqs.len().div_ceil(threads);
        std::thread::scope(|scope| {
            for (seq_chunk, slot_chunk) in seqs.chunks(chunk).zip(slots.chunks_mut(chunk)) {
                scope.spawn(move || {
                    for (s, slot) in seq_chunk.iter().zip(slot_chunk) {
                        *slot = Some(process_sequence(s, out, opts));
                    }
                });
            }
        });
        slots.into_iter().map(|s| s.expect("every sequence processed")).collect()
    };
    let mut manifest = Manifest {
        root: out.to_path_buf(),
        scale: opts.prep.scale,
        rank: opts.prep.rank,
        flow_source: opts.flow.name().to_string(),
        sequences: Vec::new(),
        flows: Vec::new(),
        patches: Vec::new(),
    };
    for r in results {
        let r = r?;
        manifest.sequences.push(r.entry);
        manifest.flows.extend(r.flows);
        manifest.patches.extend(r.patches);
    }
    error::write(&out.join(MANIFEST_FILE), manifest.to_text().as_bytes())?;
    Ok(manifest)
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let r = &self.rank;
        let mut s = String::from("vsrkit-manifest 1\n");
        s += &format!("options {} {} {} {} {} {}\n", self.scale, r.patch, r.top_k, r.stride, r.min_variance, self.flow_source);
        for q in &self.sequences {
            s += &format!("sequence {} {} {} {} {}\n", q.name, q.frames, q.width, q.height, q.channels);
        }
        for f in &self.flows {
            s += &format!("flow {} {} {} {}\n", f.sequence, f.t, f.file.path, f.file.sha256);
        }
        for p in &self.patches {
            let c = &p.record;
            s += &format!("patch {} {} {} {} {} {} {} {}\n", p.sequence, c.frame, c.x, c.y, c.size, c.score, p.file.path, p.file.sha256);
        }
        s
    }

    /// Reads `manifest.txt` from a file path or from the directory holding it.
    pub fn load(path: &Path) -> Result<Manifest> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = String::from_utf8(error::read(&file)?).map_err(|_| Error::format(&file, "manifest is not UTF-8"))?;
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root).map_err(|(line, msg)| Error::format(&file, format!("line {line}: {msg}")))
    }

    fn parse(text: &str, root: PathBuf) -> std::result::Result<Manifest, (usize, String)> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, "vsrkit-manifest 1")) => {}
            _ => return Err((1, "missing `vsrkit-manifest 1` header".into())),
        }
        let mut m = Manifest {
            root,
            scale: 0,
            rank: RankOptions::default(),
            flow_source: String::new(),
            sequences: Vec::new(),
            flows: Vec::new(),
            patches: Vec::new(),
        };
        let mut saw_options = false;
        for (n, line) in lines {
            let f: Vec<&str> = line.split(' ').collect();
            let num = |i: usize| -> std::result::Result<usize, (usize, String)> {
                f[i].parse().map_err(|_| (n, format!("bad number `{}`", f[i])))
            };
            let file = |i: usize| FileRef { path: f[i].to_string(), sha256: f[i + 1].to_string() };
            match (f[0], f.len()) {
                ("options", 7) => {
                    m.scale = num(1)?;
                    m.rank = RankOptions {
                        patch: num(2)?,
                        top_k: num(3)?,
                        stride: num(4)?,
                        min_variance: f[5].parse().map_err(|_| (n, "bad min_variance".to_string()))?,
                    };
                    m.flow_source = f[6].to_string();
                    saw_options = true;
                }
                ("sequence", 6) => m.sequences.push(SequenceEntry {
                    name: f[1].to_string(),
                    frames: num(2)?,
                    width: num(3)?,
                    height: num(4)?,
                    channels: num(5)?,
                }),
                ("flow", 5) => m.flows.push(FlowEntry { sequence: f[1].to_string(), t: num(2)?, file: file(3) }),
                ("patch", 9) => {
                    let score: f32 = f[6].parse().map_err(|_| (n, "bad score".to_string()))?;
                    let record = PatchRecord { frame: num(2)?, x: num(3)?, y: num(4)?, size: num(5)?, score };
                    m.patches.push(PatchEntry { sequence: f[1].to_string(), record, file: file(7) });
                }
                _ => return Err((n, format!("unrecognized record `{line}`"))),
            }
        }
        if !saw_options {
            return Err((2, "missing options line".into()));
        }
        Ok(m)
    }

    fn read_verified(&self, file: &FileRef) -> Result<Vec<u8>> {
        let path = self.root.join(&file.path);
        let bytes = error::read(&path)?;
        if sha256_hex(&bytes) != file.sha256 {
            return Err(Error::format(&path, "content hash does not match the manifest"));
        }
        Ok(bytes)
    }

    /// Reads every patch file, verifying its hash.
    pub fn load_samples(&self) -> Result<Vec<PatchSample>> {
        self.patches
            .iter()
            .map(|p| {
                let bytes = self.read_verified(&p.file)?;
                decode_patch(&bytes).map_err(|m| Error::format(&self.root.join(&p.file.path), m))
            })
            .collect()
    }

    /// Flows of one sequence in frame order, verified against their hashes.
    pub fn load_flows(&self, sequence: &str) -> Result<Vec<FlowField>> {
        self.flows
            .iter()
            .filter(|f| f.sequence == sequence)
            .map(|f| {
                let path = self.root.join(&f.file.path);
                flo::decode(&self.read_verified(&f.file)?).map_err(|e| Error::format(&path, e.to_string()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use vsrkit_core::synth::SynthKind;
    use vsrkit_core::Shape;

    #[test]
    fn patch_file_round_trip() {
        let t = |k: f32| Tensor::from_fn(Shape::new(1, 1, 4, 4), |_, _, y, x| k + (x + 4 * y) as f32 / 16.0);
        let s = PatchSample { hr_t: t(0.0), hr_t1: t(0.1), lr_up_t: t(0.2), lr_up_t1: t(0.3), flow: FlowField::uniform(4, 4, 0.5, -1.25) };
        assert_eq!(decode_patch(&encode_patch(&s)).unwrap(), s);
        assert!(decode_patch(&encode_patch(&s)[..40]).is_err());
    }

    #[test]
    fn manifest_text_round_trip_and_hash_check() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = SynthConfig::new(SynthKind::TranslatingTexture);
        (cfg.width, cfg.height, cfg.frames) = (32, 32, 3);
        write_synthetic(&dir.path().join("video"), &cfg, 3, 1).unwrap();
        let mut opts = ManifestOptions::default();
        opts.prep.rank = RankOptions { patch: 16, top_k: 2, stride: 8, min_variance: 0.0 };
        opts.flow = FlowSource::GroundTruth;
        let out = dir.path().join("prep");
        let m = build_manifest(&dir.path().join("video"), &out, &opts).unwrap();
        let back = Manifest::load(&out).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.load_samples().unwrap().len(), m.patches.len());
        std::fs::write(out.join(&m.patches[0].file.path), b"tampered").unwrap();
        let err = back.load_samples().unwrap_err().to_string();
        assert!(err.contains("hash"), "{err}");
    }
}

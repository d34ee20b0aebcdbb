//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vsrkit_core::dataset::PrepOptions;
use vsrkit_core::flow::{endpoint_error, estimate_flow, weight_map, HornSchunck};
use vsrkit_core::gradcheck::{gradient_suite, identity_suite, GradCheckConfig};
use vsrkit_core::patches::RankOptions;
use vsrkit_core::synth::{SynthConfig, SynthKind};
use vsrkit_core::tape::Fault;
use vsrkit_core::{Shape, Tensor};

use crate::config::{resolve, KeyValues, Trainer};
use crate::error::{Error, Result};
use crate::frames::{save_frame, FrameSequence};
use crate::pipeline::{profile_image, run_eval, run_infer, run_training, EvalFlow, EvalOptions, ProfileColor, SrSource};
use crate::prep::{build_manifest, flow_name, write_synthetic, FlowSource, ManifestOptions};
use crate::{flo, report};

#[derive(Parser, Debug)]
#[command(name = "vsrkit", version, about = "Flow-weighted and warp-consistent video super-resolution toolkit")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a seeded synthetic video root with ground-truth flow and masks
    Synth(SynthArgs),
    /// Compute flows and motion-ranked patches and write a manifest
    Prep(PrepArgs),
    /// Optical-flow tools
    #[command(subcommand)]
    Flow(FlowCommand),
    /// Train with the flow-weighted spatial objective
    TrainSosr(TrainArgs),
    /// Train with the siamese warp-consistency objective
    TrainTosr(TrainArgs),
    /// Run a checkpoint over a frame directory
    Infer(InferArgs),
    /// Score SR output against reference sequences
    Eval(EvalArgs),
    /// Write the temporal profile of a frame directory
    Profile(ProfileArgs),
    /// Run the gradient-check and loss-identity suites
    Selftest(SelftestArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    TranslatingTexture,
    MovingForeground,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    count: usize,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    /// Per-frame displacement `u,v` for translating textures; random per clip if omitted
    #[arg(long, value_parser = parse_pair)]
    shift: Option<(f32, f32)>,
    /// Side of the moving block
    #[arg(long, default_value_t = 20)]
    block: usize,
}

fn parse_pair(s: &str) -> std::result::Result<(f32, f32), String> {
    let (a, b) = s.split_once(',').ok_or("expected `u,v`")?;
    Ok((a.trim().parse().map_err(|_| "bad u")?, b.trim().parse().map_err(|_| "bad v")?))
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FlowChoice {
    Estimate,
    GroundTruth,
}

#[derive(Args, Debug, Clone, Copy)]
struct HsArgs {
    /// Horn-Schunck iterations
    #[arg(long, default_value_t = 200)]
    flow_iterations: usize,
    /// Horn-Schunck smoothness weight on the 0-255 scale
    #[arg(long, default_value_t = 15.0)]
    smoothness: f32,
}

impl HsArgs {
    fn params(&self) -> Result<HornSchunck> {
        if !(self.smoothness > 0.0 && self.smoothness.is_finite()) {
            return Err(Error::Config("`--smoothness` must be positive".into()));
        }
        Ok(HornSchunck { smoothness: self.smoothness, iterations: self.flow_iterations })
    }
}

#[derive(Args, Debug)]
struct PrepArgs {
    /// Video root with one frame directory per sequence
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = FlowChoice::Estimate)]
    flow: FlowChoice,
    #[command(flatten)]
    hs: HsArgs,
    #[arg(long, default_value_t = 4)]
    scale: usize,
    #[arg(long, default_value_t = 32)]
    patch: usize,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    #[arg(long, default_value_t = 8)]
    stride: usize,
    /// Skip windows whose luma variance is below this
    #[arg(long, default_value_t = 0.0)]
    min_variance: f32,
    /// Sequences processed concurrently
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand, Debug)]
enum FlowCommand {
    /// Estimate flow between consecutive frames and write `.flo` files
    Estimate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        hs: HsArgs,
    },
    /// Convert a `.flo` file to a flow-magnitude image scaled by its maximum
    WeightMap {
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the mean endpoint error between two `.flo` files
    Epe {
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        reference: PathBuf,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Key-value config file; flags below override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, `key=value`; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    scale: usize,
    /// Input frames are already low resolution; upsample instead of degrading
    #[arg(long)]
    lr_input: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EvalFlowChoice {
    Auto,
    Estimate,
    GroundTruth,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Reference root with one HR frame directory per sequence
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Super-resolve degraded reference frames with this checkpoint
    #[arg(long, conflicts_with = "sr", required_unless_present = "sr")]
    checkpoint: Option<PathBuf>,
    /// Root of precomputed SR frame directories, matched to references by name
    #[arg(long)]
    sr: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    scale: usize,
    /// Flow between reference frames used for the warp error
    #[arg(long, value_enum, default_value_t = EvalFlowChoice::Auto)]
    flow: EvalFlowChoice,
    #[command(flatten)]
    hs: HsArgs,
    /// Pixel value range of the frames
    #[arg(long, default_value_t = 1.0)]
    peak: f64,
    /// Write temporal profiles of the SR clips
    #[arg(long)]
    profiles: bool,
    /// Profile row; the middle row if omitted
    #[arg(long)]
    profile_row: Option<usize>,
    /// Profiles from luma instead of colour
    #[arg(long)]
    luma: bool,
}

#[derive(Args, Debug)]
struct ProfileArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Row to sample; the middle row if omitted
    #[arg(long)]
    row: Option<usize>,
    #[arg(long)]
    luma: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FaultChoice {
    Conv2d,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    /// Corrupt one backward rule to demonstrate that the checks catch it
    #[arg(long, value_enum)]
    inject_fault: Option<FaultChoice>,
}

fn color(luma: bool) -> ProfileColor {
    if luma { ProfileColor::Luma } else { ProfileColor::Color }
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit code.
pub fn dispatch<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().ansi().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    match run(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn say(out: &mut dyn Write, msg: std::fmt::Arguments) {
    let _ = out.write_fmt(msg);
    let _ = out.write_all(b"\n");
}

fn run(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Synth(a) => {
            let kind = match a.kind {
                Kind::TranslatingTexture => SynthKind::TranslatingTexture,
                Kind::MovingForeground => SynthKind::MovingForeground,
            };
            let cfg = SynthConfig { kind, width: a.width, height: a.height, frames: a.frames, channels: a.channels, shift: a.shift, block: a.block };
            let dirs = write_synthetic(&a.out, &cfg, a.seed, a.count)?;
            say(out, format_args!("wrote {} {} clips to {}", dirs.len(), kind.name(), a.out.display()));
        }
        Command::Prep(a) => {
            let flow = match a.flow {
                FlowChoice::Estimate => FlowSource::Estimate(a.hs.params()?),
                FlowChoice::GroundTruth => FlowSource::GroundTruth,
            };
            if a.scale == 0 || a.patch == 0 || a.stride == 0 || a.top_k == 0 {
                return Err(Error::Config("`--scale`, `--patch`, `--stride` and `--top-k` must be positive".into()));
            }
            let rank = RankOptions { patch: a.patch, top_k: a.top_k, stride: a.stride, min_variance: a.min_variance };
            let opts = ManifestOptions { prep: PrepOptions { scale: a.scale, rank }, flow, threads: a.threads };
            let m = build_manifest(&a.input, &a.out, &opts)?;
            say(out, format_args!("{} sequences, {} flows, {} patches", m.sequences.len(), m.flows.len(), m.patches.len()));
        }
        Command::Flow(FlowCommand::Estimate { input, out: dir, hs }) => {
            let params = hs.params()?;
            let frames = FrameSequence::open(&input)?.load()?;
            for (t, pair) in frames.windows(2).enumerate() {
                flo::write(&dir.join(flow_name(t)), &estimate_flow(&pair[0], &pair[1], params)?)?;
            }
            say(out, format_args!("wrote {} flow fields", frames.len().saturating_sub(1)));
        }
        Command::Flow(FlowCommand::WeightMap { flow, out: path }) => {
            let w = weight_map(&flo::read(&flow)?);
            let max = w.values().iter().copied().fold(0.0f32, f32::max);
            let k = if max > 0.0 { 1.0 / max } else { 0.0 };
            let img = Tensor::from_fn(Shape::new(1, 1, w.height(), w.width()), |_, _, y, x| w.at(x, y) * k);
            save_frame(&path, &img)?;
            say(out, format_args!("max flow magnitude {max}"));
        }
        Command::Flow(FlowCommand::Epe { estimate, reference }) => {
            let e = endpoint_error(&flo::read(&estimate)?, &flo::read(&reference)?)?;
            say(out, format_args!("{e}"));
        }
        Command::TrainSosr(a) => train(Trainer::Sosr, a, out)?,
        Command::TrainTosr(a) => train(Trainer::Tosr, a, out)?,
        Command::Infer(a) => {
            let n = run_infer(&a.checkpoint, &a.input, &a.out, a.scale, a.lr_input)?;
            say(out, format_args!("wrote {n} frames to {}", a.out.display()));
        }
        Command::Eval(a) => {
            let sr = match (a.checkpoint, a.sr) {
                (Some(path), _) => SrSource::Checkpoint { path, scale: a.scale },
                (None, Some(root)) => SrSource::Frames(root),
                (None, None) => return Err(Error::Config("one of `--checkpoint` or `--sr` is required".into())),
            };
            let params = a.hs.params()?;
            let flow = match a.flow {
                EvalFlowChoice::Auto => EvalFlow::Auto(params),
                EvalFlowChoice::Estimate => EvalFlow::Source(FlowSource::Estimate(params)),
                EvalFlowChoice::GroundTruth => EvalFlow::Source(FlowSource::GroundTruth),
            };
            if !(a.peak > 0.0) {
                return Err(Error::Config("`--peak` must be positive".into()));
            }
            let opts = EvalOptions { sr, flow, peak: a.peak, profile: a.profiles.then_some((a.profile_row, color(a.luma))) };
            let reports = run_eval(&a.reference, &a.out, &opts)?;
            let text = report::report_csv(&reports)?;
            let _ = out.write_all(text.as_bytes());
        }
        Command::Profile(a) => {
            let seq = FrameSequence::open(&a.input)?;
            let row = a.row.unwrap_or(seq.height / 2);
            save_frame(&a.out, &profile_image(&seq.load()?, row, color(a.luma))?)?;
            say(out, format_args!("profile of row {row} over {} frames", seq.len()));
        }
        Command::Selftest(a) => selftest(a.inject_fault.map(|FaultChoice::Conv2d| Fault::Conv2dBackward), out)?,
    }
    Ok(())
}

fn train(trainer: Trainer, a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut kv = match &a.config {
        Some(p) => KeyValues::load(p)?,
        None => KeyValues::default(),
    };
    for s in &a.set {
        kv.set_pair(s).map_err(|m| Error::Config(format!("--set: {m}")))?;
    }
    if let Some(v) = &a.manifest {
        kv.set("manifest", v.display());
    }
    if let Some(v) = &a.out {
        kv.set("out", v.display());
    }
    if let Some(v) = a.seed {
        kv.set("seed", v);
    }
    if let Some(v) = a.iterations {
        kv.set("iterations", v);
    }
    // validate every key before touching the dataset; channels are fixed later from the manifest
    let cfg = resolve(trainer, &kv, 1)?;
    let summary = run_training(&cfg)?;
    say(
        out,
        format_args!(
            "{} iterations on {} patches, final total {}; checkpoint {}",
            summary.iterations,
            summary.samples,
            summary.final_total.map_or("n/a".to_string(), |t| t.to_string()),
            summary.checkpoint.display()
        ),
    );
    Ok(())
}

/// Runs both suites, printing one line per check; fails with the failing names.
pub fn selftest(fault: Option<Fault>, out: &mut dyn Write) -> Result<()> {
    let start = Instant::now();
    let mut failed = Vec::new();
    for c in gradient_suite(GradCheckConfig { fault, ..GradCheckConfig::default() })? {
        let verdict = if c.passed { "ok" } else { "FAILED" };
        say(out, format_args!("grad {:<28} {verdict:<6} max rel error {:.2e} over {} instances", c.op, c.max_rel_error, c.instances));
        if !c.passed {
            failed.push(c.op.to_string());
        }
    }
    for c in identity_suite()? {
        let verdict = if c.passed { "ok" } else { "FAILED" };
        say(out, format_args!("identity {:<24} {verdict:<6} {}", c.name, c.detail));
        if !c.passed {
            failed.push(c.name.to_string());
        }
    }
    say(out, format_args!("selftest finished in {:.1} s", start.elapsed().as_secs_f64()));
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(format!("selftest failed: {}", failed.join(", "))))
    }
}

pub fn main_exit_code() -> i32 {
    let mut out = std::io::stdout().lock();
    let mut err = std::io::stderr().lock();
    dispatch(std::env::args_os(), &mut out, &mut err)
}

//! Training run configuration.
//!
//! A config file holds one `key = value` pair per line; blank lines and
//! lines starting with `#` are ignored. Command-line overrides are applied
//! on top and win. Every key is validated before any work starts and keys
//! that the chosen trainer does not use are rejected.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `manifest` | required | prepared dataset (`manifest.txt` or its directory) |
//! | `out` | required | output directory |
//! | `seed` | 0 | model, sampler and discriminator seed |
//! | `iterations` | 1000 | optimizer steps |
//! | `batch_size` | 16 | patches per step |
//! | `lr` | 1e-4 | Adam learning rate |
//! | `lr_decay_every` | 10 | epochs between decays; 0 disables |
//! | `lr_decay_factor` | 0.1 | multiplier applied at each decay |
//! | `depth`, `width` | 8, 32 | SR network shape |
//! | `alpha`, `beta`, `gamma` | 1, 1, 0.005 (SoSR); 1, 0.8, 0.1 (ToSR) | loss weights |
//! | `checkpoint_every` | 0 | iterations between intermediate checkpoints; 0 disables |
//! | `pixel_loss` | `wmse` | SoSR only: `wmse` or `mse` |
//! | `use_feature`, `use_adversarial` | true | SoSR only: enable loss terms |
//! | `disc_lr`, `disc_width` | 1e-4, 16 | SoSR only: discriminator settings |
//! | `warp_border` | `include` | ToSR only: `include` or `exclude` out-of-frame samples |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use vsrkit_core::models::SrConfig;
use vsrkit_core::optim::AdamConfig;
use vsrkit_core::sosr::{PixelLoss, SosrConfig, SosrWeights};
use vsrkit_core::tosr::{TosrConfig, TosrWeights, WarpBorder};
use vsrkit_core::train::TrainConfig;

use crate::error::{self, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trainer {
    Sosr,
    Tosr,
}

const COMMON_KEYS: &[&str] = &[
    "manifest", "out", "seed", "iterations", "batch_size", "lr", "lr_decay_every", "lr_decay_factor", "depth", "width", "alpha", "beta", "gamma",
    "checkpoint_every",
];
const SOSR_KEYS: &[&str] = &["pixel_loss", "use_feature", "use_adversarial", "disc_lr", "disc_width"];
const TOSR_KEYS: &[&str] = &["warp_border"];

impl Trainer {
    fn accepts(self, key: &str) -> bool {
        COMMON_KEYS.contains(&key)
            || match self {
                Trainer::Sosr => SOSR_KEYS.contains(&key),
                Trainer::Tosr => TOSR_KEYS.contains(&key),
            }
    }

    pub fn name(self) -> &'static str {
        match self {
            Trainer::Sosr => "train-sosr",
            Trainer::Tosr => "train-tosr",
        }
    }
}

/// Raw key-value pairs; later insertions replace earlier ones.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues(BTreeMap<String, String>);

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            kv.set_pair(line).map_err(|m| Error::Config(format!("config line {}: {m}", i + 1)))?;
        }
        Ok(kv)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = error::read(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Config(format!("{}: config is not UTF-8", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies one `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> std::result::Result<(), String> {
        let (k, v) = pair.split_once('=').ok_or_else(|| format!("expected `key = value`, got `{pair}`"))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(format!("empty key in `{pair}`"));
        }
        self.0.insert(k.to_string(), v.to_string());
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.0.insert(key.to_string(), value.to_string());
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub trainer: Trainer,
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub train: TrainConfig,
    pub checkpoint_every: usize,
    pub sosr: SosrConfig,
    pub tosr: TosrConfig,
}

struct Fields<'a> {
    kv: &'a BTreeMap<String, String>,
}

impl Fields<'_> {
    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.kv.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`"))),
        }
    }

    fn path(&self, key: &str) -> Result<PathBuf> {
        match self.kv.get(key) {
            Some(v) if !v.is_empty() => Ok(PathBuf::from(v)),
            _ => Err(Error::Config(format!("missing required key `{key}`"))),
        }
    }

    fn choice<T: Copy>(&self, key: &str, default: T, options: &[(&str, T)]) -> Result<T> {
        match self.kv.get(key) {
            None => Ok(default),
            Some(v) => options.iter().find(|(n, _)| n == v).map(|&(_, t)| t).ok_or_else(|| {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                Error::Config(format!("invalid value `{v}` for `{key}`; expected one of {}", names.join(", ")))
            }),
        }
    }
}

fn config_err(e: vsrkit_core::CoreError) -> Error {
    Error::Config(e.to_string())
}

/// Image channels are not a config key; they come from the dataset.
pub fn resolve(trainer: Trainer, kv: &KeyValues, channels: usize) -> Result<RunConfig> {
    if let Some(k) = kv.0.keys().find(|k| !trainer.accepts(k)) {
        return Err(Error::Config(format!("unknown key `{k}` for {}", trainer.name())));
    }
    let f = Fields { kv: &kv.0 };
    let manifest = f.path("manifest")?;
    let out = f.path("out")?;
    let train = TrainConfig {
        seed: f.get("seed", 0)?,
        iterations: f.get("iterations", 1000)?,
        batch_size: f.get("batch_size", 16)?,
        lr: f.get("lr", 1e-4)?,
        lr_decay_every_epochs: f.get("lr_decay_every", 10)?,
        lr_decay_factor: f.get("lr_decay_factor", 0.1)?,
        adam: AdamConfig::default(),
        model: SrConfig::new(f.get("depth", 8)?, f.get("width", 32)?, channels),
    };
    train.validate().map_err(config_err)?;
    if train.model.width == 0 {
        return Err(Error::Config("`width` must be at least 1".into()));
    }
    let (a0, b0, g0) = match trainer {
        Trainer::Sosr => (SosrWeights::DEFAULT.alpha, SosrWeights::DEFAULT.beta, SosrWeights::DEFAULT.gamma),
        Trainer::Tosr => (TosrWeights::DEFAULT.alpha, TosrWeights::DEFAULT.beta, TosrWeights::DEFAULT.gamma),
    };
    let (alpha, beta, gamma) = (f.get("alpha", a0)?, f.get("beta", b0)?, f.get("gamma", g0)?);
    let sosr = SosrConfig {
        train,
        weights: SosrWeights { alpha, beta, gamma },
        pixel_loss: f.choice("pixel_loss", PixelLoss::Wmse, &[("wmse", PixelLoss::Wmse), ("mse", PixelLoss::Mse)])?,
        use_feature: f.get("use_feature", true)?,
        use_adversarial: f.get("use_adversarial", true)?,
        disc_lr: f.get("disc_lr", 1e-4)?,
        disc_width: f.get("disc_width", 16)?,
    };
    let tosr = TosrConfig {
        train,
        weights: TosrWeights { alpha, beta, gamma },
        border: f.choice("warp_border", WarpBorder::Include, &[("include", WarpBorder::Include), ("exclude", WarpBorder::Exclude)])?,
    };
    match trainer {
        Trainer::Sosr => {
            sosr.weights.validate().map_err(config_err)?;
            if !(sosr.disc_lr >= 0.0 && sosr.disc_lr.is_finite()) || sosr.disc_width == 0 {
                return Err(Error::Config("`disc_lr` must be finite and nonnegative and `disc_width` positive".into()));
            }
        }
        Trainer::Tosr => tosr.weights.validate().map_err(config_err)?,
    }
    Ok(RunConfig { trainer, manifest, out, train, checkpoint_every: f.get("checkpoint_every", 0)?, sosr, tosr })
}

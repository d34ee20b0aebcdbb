//! Model checkpoints.
//!
//! Layout, little-endian: magic `VSRC`, format version (u32), the model's
//! depth, width, channels and kernel (u32 each), the parameter count (u32),
//! then per parameter its name length (u32), UTF-8 name, four dimensions
//! (u32 each) and raw f32 values.

use std::path::Path;

use vsrkit_core::models::{build_sr_net, SrConfig, SrModel};
use vsrkit_core::Tensor;

use crate::bytes::{Reader, Writer};
use crate::error::{self, Error, Result};

const MAGIC: &[u8; 4] = b"VSRC";
pub const VERSION: u32 = 1;

pub fn encode_checkpoint(model: &SrModel) -> Vec<u8> {
    let cfg = model.config();
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    for d in [cfg.depth, cfg.width, cfg.channels, cfg.kernel] {
        w.dim(d);
    }
    w.dim(model.params().len());
    for p in model.params().iter() {
        w.dim(p.name.len());
        w.bytes(p.name.as_bytes());
        w.tensor(&p.value);
    }
    w.0
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<SrModel, String> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err("not a checkpoint".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let cfg = SrConfig { depth: r.dim()?, width: r.dim()?, channels: r.dim()?, kernel: r.dim()? };
    let mut model = build_sr_net(cfg, 0).map_err(|e| e.to_string())?;
    let count = r.dim()?;
    let mut values: Vec<(String, Tensor)> = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.dim()?;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| "parameter name is not UTF-8")?.to_string();
        values.push((name, r.tensor()?));
    }
    r.finish()?;
    if values.iter().any(|(_, t)| !t.is_finite()) {
        return Err("non-finite parameter value".into());
    }
    model.params_mut().load_values(&values).map_err(|e| e.to_string())?;
    Ok(model)
}

pub fn save_checkpoint(path: &Path, model: &SrModel) -> Result<()> {
    error::write(path, &encode_checkpoint(model))
}

pub fn load_checkpoint(path: &Path) -> Result<SrModel> {
    decode_checkpoint(&error::read(path)?).map_err(|m| Error::format(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use vsrkit_core::Shape;

    #[test]
    fn round_trip_reproduces_forward_outputs() {
        let mut model = build_sr_net(SrConfig::new(3, 4, 1), 7).unwrap();
        // the last layer starts at zero; perturb it so the forward pass is non-trivial
        for p in model.params_mut().iter_mut() {
            p.value = p.value.map(|v| v + 0.01);
        }
        let back = decode_checkpoint(&encode_checkpoint(&model)).unwrap();
        let x = Tensor::from_fn(Shape::new(1, 1, 6, 6), |_, _, y, x| (x * y) as f32 / 25.0);
        assert_eq!(model.infer(&x).unwrap().data(), back.infer(&x).unwrap().data());
        assert_eq!(encode_checkpoint(&back), encode_checkpoint(&model));
    }

    #[test]
    fn damaged_files_rejected() {
        let bytes = encode_checkpoint(&build_sr_net(SrConfig::new(2, 2, 1), 1).unwrap());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_checkpoint(b"nope").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
    }
}

//! Middlebury `.flo` optical-flow files.
//!
//! Layout, all little-endian: the float tag `202021.25` (bytes `PIEH`),
//! width and height as 32-bit integers, then `width * height` interleaved
//! `(u, v)` float pairs in row-major order.

use std::path::Path;

use vsrkit_core::FlowField;

use crate::error::{self, Error, Result};

pub const TAG: f32 = 202021.25;
const HEADER: usize = 12;
/// Sanity bound on either dimension, as used by the reference tools.
const MAX_DIM: u32 = 99_999;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FloError {
    #[error("not a flow file")]
    BadTag,
    #[error("corrupt flow file: {0}")]
    Corrupt(&'static str),
}

pub fn encode(flow: &FlowField) -> Vec<u8> {
    let (w, h) = (flow.width(), flow.height());
    let mut out = Vec::with_capacity(HEADER + 8 * w * h);
    out.extend_from_slice(&TAG.to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    for (u, v) in flow.u().iter().zip(flow.v()) {
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<FlowField, FloError> {
    let word = |i: usize| -> [u8; 4] { bytes[i..i + 4].try_into().expect("4 bytes") };
    if bytes.len() < 4 || f32::from_le_bytes(word(0)) != TAG {
        return Err(FloError::BadTag);
    }
    if bytes.len() < HEADER {
        return Err(FloError::Corrupt("truncated header"));
    }
    let (w, h) = (u32::from_le_bytes(word(4)), u32::from_le_bytes(word(8)));
    if w == 0 || h == 0 || w > MAX_DIM || h > MAX_DIM {
        return Err(FloError::Corrupt("implausible dimensions"));
    }
    let n = w as usize * h as usize;
    if bytes.len() != HEADER + 8 * n {
        return Err(FloError::Corrupt("payload length does not match dimensions"));
    }
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for k in 0..n {
        u.push(f32::from_le_bytes(word(HEADER + 8 * k)));
        v.push(f32::from_le_bytes(word(HEADER + 8 * k + 4)));
    }
    FlowField::new(w as usize, h as usize, u, v).map_err(|_| FloError::Corrupt("non-finite flow value"))
}

pub fn read(path: &Path) -> Result<FlowField> {
    decode(&error::read(path)?).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write(path: &Path, flow: &FlowField) -> Result<()> {
    error::write(path, &encode(flow))
}

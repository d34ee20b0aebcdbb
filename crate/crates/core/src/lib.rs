//! Numeric core for training and evaluating video super-resolution models
//! with motion-weighted and warp-consistency objectives.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, the command
//! line and all other IO live in the companion `vsrkit` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod ablation;
pub mod conv;
pub mod dataset;
pub mod error;
pub mod flow;
pub mod gradcheck;
pub mod math;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod patches;
pub mod resample;
pub mod sosr;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod tosr;
pub mod train;
pub mod warp;

pub use error::CoreError;
pub use flow::{FlowField, WeightMap};
pub use tape::{Gradients, ParamSet, Parameter, Tape, Var};
pub use tensor::{Shape, Tensor};

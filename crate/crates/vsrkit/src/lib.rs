//! Files, data preparation, training runs and the command line for
//! [`vsrkit_core`].

pub use vsrkit_core as core;

mod bytes;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod flo;
pub mod frames;
pub mod pipeline;
pub mod prep;
pub mod report;

pub use error::{Error, Result};

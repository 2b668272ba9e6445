pub mod corpus;
pub mod error;
pub mod hpf;
pub mod inference;
pub mod io;
pub mod math;
pub mod model;
pub mod postprocess;
pub mod state;
pub mod synth;
#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};

//! Sequential treatment-effect estimation under unmeasured confounding.

pub mod bench;
pub mod cfr;
pub mod decompose;
mod error;
pub mod model;
pub mod nn;
pub mod rng;
pub mod simgen;
pub mod tensor;

pub use error::{Error, Result};

#[cfg(test)]
mod testutil;

pub mod cdrn;
pub mod channel;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod linalg;
pub mod nn;
pub mod protocol;
pub mod rng;
pub mod selftest;

pub use error::{Error, Result};

pub mod config;
pub mod encoders;
pub mod error;
pub mod harness;
pub mod inference;
pub mod knowledge;
pub mod model;
pub mod numerics;
pub mod prompting;
pub mod rng;

pub use error::{Error, Result};

pub mod analysis;
pub mod cli;
pub mod data;
pub mod embeddings;
pub mod error;
pub mod kde;
pub mod kernels;
pub mod model;
pub mod rng;
pub mod runtime;

pub use error::{AenError, Result};

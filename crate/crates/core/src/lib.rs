//! Permuted block-diagonal masks for fully-connected layers: mask
//! generation, masked training, block recovery, and packed inference.

pub mod container;
pub mod dataio;
pub mod decompose;
pub mod error;
pub mod linalg;
pub mod maskgen;
pub mod pack;
pub mod perm;
pub mod rng;
pub mod train;

pub use error::{Error, Result};

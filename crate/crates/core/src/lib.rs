//! Score-based diffusion over trajectories of protein backbone frames.
//!
//! Given a residue sequence, a clean reference structure and the preceding
//! motion structures, the model denoises `S` future frame grids jointly.

pub mod autodiff;
pub mod dataio;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod features;
pub mod geom;
pub mod network;
pub mod protein;
pub mod trainer;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};

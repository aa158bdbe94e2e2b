//! Numerical core for dose-aware tomographic acquisition.
//!
//! The crate covers everything that does not touch the filesystem or the
//! network: golden-ratio and incremental tilt schemes, phantom volumes,
//! iterative beam-damage simulation, parallel-beam projection, streaming
//! orthoslice reconstruction, EM reconstruction, convergence/quality
//! metrics with a stopping rule, and projection alignment.
//!
//! It is `no_std` and only needs an allocator.

#![no_std]
// `!(x > 0.0)` style guards are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod align;
pub mod damage;
mod error;
pub mod fft;
pub mod geometry;
mod image;
pub mod metrics;
pub mod phantom;
pub mod projector;
pub mod recon;
mod volume;

pub use error::{Error, Result};
pub use image::Image;
pub use volume::VoxelVolume;

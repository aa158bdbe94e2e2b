//! Streaming tomography sessions on top of `tiltstream-core`: config files,
//! on-disk formats, the event socket and offline replay.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analyze;
pub mod config;
pub mod error;
pub mod io;
pub mod session;
pub mod stream;
pub mod wire;

pub use error::{Error, Result};

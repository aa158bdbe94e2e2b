//! Reconstruction: streaming orthoslices by filtered backprojection,
//! full-volume EM for post-processing, and Otsu binarization.

mod em;
mod fbp;
mod otsu;

pub use em::{em_reconstruct, EmConfig, EM_EPSILON};
pub use fbp::{fbp_slice, OrthosliceSet, Plane, RampFilter, SliceSpec, StreamingReconstructor};
pub use otsu::{binarize, otsu_threshold, OTSU_BINS};

//! Tilt schemes and the single-axis parallel-beam geometry.
//!
//! Angles are kept in degrees everywhere; radians only appear inside the
//! golden-ratio formula and the trigonometry of the projector.

use alloc::vec::Vec;
#[allow(unused_imports)] // inherent when a dependency links std
use num_traits::Float as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// (1 + sqrt 5) / 2
pub const GOLDEN_RATIO: f64 = 1.618_033_988_749_895;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    /// Golden-ratio scanning.
    Grs,
    /// Incremental scanning with a fixed step.
    Is,
}

/// Ordered acquisition plan.
///
/// `angles_deg[k]` is the angle of the `k`-th acquired image and
/// `indices[k]` its 1-based image index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltScheme {
    pub kind: SchemeKind,
    pub annular_range_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub increment_deg: Option<f64>,
    pub angles_deg: Vec<f64>,
    pub indices: Vec<usize>,
}

fn check_range(annular_range_deg: f64) -> Result<()> {
    if !(annular_range_deg > 0.0 && annular_range_deg <= 180.0) {
        return Err(invalid!("annular range {annular_range_deg} deg must lie in (0, 180]"));
    }
    Ok(())
}

/// Angle of the `index`-th golden-ratio image (1-based), in degrees.
///
/// `theta = (i * alpha * phi mod alpha) - alpha / 2`, with the modulo taken
/// into `[0, alpha)`.
pub fn grs_angle(index: usize, annular_range_deg: f64) -> f64 {
    let alpha = annular_range_deg.to_radians();
    let raw = index as f64 * alpha * GOLDEN_RATIO;
    let wrapped = raw - alpha * (raw / alpha).floor();
    // floor() can leave `alpha` itself after rounding
    let wrapped = if wrapped >= alpha { wrapped - alpha } else { wrapped };
    (wrapped - alpha / 2.0).to_degrees()
}

/// First `n` golden-ratio angles in chronological order.
pub fn grs_angles(n: usize, annular_range_deg: f64) -> Result<TiltScheme> {
    if n == 0 {
        return Err(invalid!("golden-ratio scheme needs at least one projection"));
    }
    check_range(annular_range_deg)?;
    let indices: Vec<usize> = (1..=n).collect();
    let angles_deg = indices.iter().map(|&i| grs_angle(i, annular_range_deg)).collect();
    Ok(TiltScheme { kind: SchemeKind::Grs, annular_range_deg, increment_deg: None, angles_deg, indices })
}

/// Equally spaced sweep from `-range/2` to `+range/2` inclusive.
pub fn is_angles(increment_deg: f64, annular_range_deg: f64) -> Result<TiltScheme> {
    check_range(annular_range_deg)?;
    if !(increment_deg > 0.0) {
        return Err(invalid!("tilt increment {increment_deg} deg must be positive"));
    }
    let steps = annular_range_deg / increment_deg;
    let rounded = steps.round();
    if (steps - rounded).abs() > 1e-9 || rounded < 1.0 {
        return Err(invalid!("increment {increment_deg} deg does not divide the annular range {annular_range_deg} deg"));
    }
    let count = rounded as usize + 1;
    let half = annular_range_deg / 2.0;
    let angles_deg = (0..count).map(|k| -half + k as f64 * increment_deg).collect();
    Ok(TiltScheme {
        kind: SchemeKind::Is,
        annular_range_deg,
        increment_deg: Some(increment_deg),
        angles_deg,
        indices: (1..=count).collect(),
    })
}

/// Span `max - min` of the first `first_n` acquired angles.
pub fn angular_coverage(scheme: &TiltScheme, first_n: usize) -> Result<f64> {
    if first_n == 0 || first_n > scheme.len() {
        return Err(invalid!("first_n {first_n} outside 1..={}", scheme.len()));
    }
    let prefix = &scheme.angles_deg[..first_n];
    let (lo, hi) = prefix.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| (lo.min(a), hi.max(a)));
    Ok(hi - lo)
}

impl TiltScheme {
    pub fn len(&self) -> usize {
        self.angles_deg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles_deg.is_empty()
    }

    pub fn contains_angle(&self, angle_deg: f64) -> bool {
        angle_deg.abs() <= self.annular_range_deg / 2.0 + 1e-9
    }

    /// Checks the scheme invariants; used when loading persisted schemes.
    pub fn validate(&self) -> Result<()> {
        check_range(self.annular_range_deg)?;
        if self.indices.len() != self.angles_deg.len() {
            return Err(invalid!("scheme has {} angles but {} indices", self.angles_deg.len(), self.indices.len()));
        }
        if let Some(a) = self.angles_deg.iter().find(|&&a| !self.contains_angle(a)) {
            return Err(invalid!("angle {a} deg outside annular range +-{}", self.annular_range_deg / 2.0));
        }
        Ok(())
    }

    /// Largest angular distance from any point of the annular range to the
    /// nearest of the first `first_n` acquired angles. A new angle can never
    /// be farther than this from its nearest predecessor.
    pub fn nearest_neighbor_bound(&self, first_n: usize) -> f64 {
        let mut sorted: Vec<f64> = self.angles_deg[..first_n.min(self.len())].to_vec();
        if sorted.is_empty() {
            return self.annular_range_deg;
        }
        sorted.sort_by(|a, b| a.total_cmp(b));
        let half = self.annular_range_deg / 2.0;
        let mut bound = (sorted[0] + half).max(half - sorted[sorted.len() - 1]);
        for pair in sorted.windows(2) {
            bound = bound.max((pair[1] - pair[0]) / 2.0);
        }
        bound
    }
}

/// Single tilt axis (y), parallel beam along z at zero tilt.
///
/// Detector rows follow the tilt axis (one sinogram per volume row) and the
/// detector is as wide as the volume along x. A volume point at centered
/// coordinates `(x, z)` lands on detector coordinate
/// `u = x cos(theta) + z sin(theta)`, i.e. a positive angle turns the volume
/// counter-clockwise seen along +y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionGeometry {
    pub volume_shape: [usize; 3],
    /// `(rows, cols)`
    pub detector_shape: (usize, usize),
}

impl ProjectionGeometry {
    pub fn for_volume(volume_shape: [usize; 3]) -> Self {
        Self { volume_shape, detector_shape: (volume_shape[1], volume_shape[0]) }
    }

    pub fn detector_rows(&self) -> usize {
        self.detector_shape.0
    }

    pub fn detector_cols(&self) -> usize {
        self.detector_shape.1
    }

    /// Number of unit-spaced samples along each ray. It covers the x-z
    /// diagonal and has the parity of `nz`, so at zero tilt the samples hit
    /// voxel centres exactly.
    pub fn ray_samples(&self) -> usize {
        let [nx, _, nz] = self.volume_shape;
        let diag = ((nx * nx + nz * nz) as f64).sqrt().ceil() as usize + 2;
        if (diag - nz).is_multiple_of(2) {
            diag
        } else {
            diag + 1
        }
    }

    /// Centered detector coordinate of column `c`.
    #[inline]
    pub fn col_to_u(&self, c: usize) -> f64 {
        c as f64 - (self.detector_cols() as f64 - 1.0) / 2.0
    }

    #[inline]
    pub fn u_to_col(&self, u: f64) -> f64 {
        u + (self.detector_cols() as f64 - 1.0) / 2.0
    }

    #[inline]
    pub fn y_to_row(&self, y: f64) -> f64 {
        y + (self.detector_rows() as f64 - 1.0) / 2.0
    }

    /// Centered coordinate of voxel index `i` along an axis of length `n`.
    #[inline]
    pub fn centered(i: usize, n: usize) -> f64 {
        i as f64 - (n as f64 - 1.0) / 2.0
    }
}

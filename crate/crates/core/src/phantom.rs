//! Ground-truth volumes.

#[allow(unused_imports)] // inherent when a dependency links std
use num_traits::Float as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::volume::VoxelVolume;

/// One ellipsoid of the 3-D Shepp-Logan table, in normalized `[-1, 1]`
/// coordinates. `phi_deg` rotates the ellipsoid about the z axis.
struct Ellipsoid {
    intensity: f64,
    semi_axes: [f64; 3],
    center: [f64; 3],
    phi_deg: f64,
}

const fn ell(intensity: f64, semi_axes: [f64; 3], center: [f64; 3], phi_deg: f64) -> Ellipsoid {
    Ellipsoid { intensity, semi_axes, center, phi_deg }
}

// Modified (high-contrast) intensities. The two ventricles and the two
// small off-axis features are mirrored pairs here, unlike the 2-D
// original, so the phantom is exactly symmetric under x -> -x.
const SHEPP_LOGAN: [Ellipsoid; 10] = [
    ell(1.0, [0.69, 0.92, 0.81], [0.0, 0.0, 0.0], 0.0),
    ell(-0.8, [0.6624, 0.874, 0.78], [0.0, -0.0184, 0.0], 0.0),
    ell(-0.2, [0.16, 0.41, 0.28], [0.22, 0.0, 0.0], -18.0),
    ell(-0.2, [0.16, 0.41, 0.28], [-0.22, 0.0, 0.0], 18.0),
    ell(0.1, [0.21, 0.25, 0.41], [0.0, 0.35, -0.15], 0.0),
    ell(0.1, [0.046, 0.046, 0.05], [0.0, 0.1, 0.25], 0.0),
    ell(0.1, [0.046, 0.046, 0.05], [0.0, -0.1, 0.25], 0.0),
    ell(0.1, [0.046, 0.023, 0.05], [-0.08, -0.605, 0.0], 0.0),
    ell(0.1, [0.023, 0.023, 0.02], [0.0, -0.606, 0.0], 0.0),
    ell(0.1, [0.046, 0.023, 0.05], [0.08, -0.605, 0.0], 0.0),
];

impl Ellipsoid {
    fn contains(&self, p: [f64; 3]) -> bool {
        let (s, c) = self.phi_deg.to_radians().sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let dz = p[2] - self.center[2];
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        let [a, b, cz] = self.semi_axes;
        (u / a).powi(2) + (v / b).powi(2) + (dz / cz).powi(2) <= 1.0
    }
}

/// Normalized coordinate of voxel `i` on an axis of `n` voxels, in (-1, 1).
fn normalized(i: usize, n: usize) -> f64 {
    (2.0 * i as f64 - (n as f64 - 1.0)) / n as f64
}

/// Sum of ellipsoid intensities at a normalized point, before clamping.
pub fn shepp_logan_value(p: [f64; 3]) -> f64 {
    SHEPP_LOGAN.iter().filter(|e| e.contains(p)).map(|e| e.intensity).sum()
}

/// Cubic 3-D Shepp-Logan phantom of side `size`, scaled to `[0, 1]`.
pub fn shepp_logan_3d(size: usize) -> Result<VoxelVolume> {
    if size < 16 {
        return Err(invalid!("Shepp-Logan phantom needs size >= 16, got {size}"));
    }
    let mut raw = VoxelVolume::from_fn([size; 3], |x, y, z| {
        shepp_logan_value([normalized(x, size), normalized(y, size), normalized(z, size)]).max(0.0) as f32
    });
    let max = raw.data().iter().fold(0.0f32, |m, &v| m.max(v));
    if max > 0.0 {
        for v in raw.data_mut() {
            *v /= max;
        }
    }
    Ok(raw)
}

/// Geometry of the hollow cage phantom, all lengths in voxels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NanocageSpec {
    pub size: usize,
    pub outer_radius: f64,
    pub wall_thickness: f64,
    /// Radius of the circular opening cut into each of the six faces.
    pub opening_radius: f64,
}

impl NanocageSpec {
    /// Face openings default to 40% of the outer radius.
    pub fn new(size: usize, outer_radius: f64, wall_thickness: f64) -> Self {
        Self { size, outer_radius, wall_thickness, opening_radius: 0.4 * outer_radius }
    }

    /// Cage filling most of the field of view: `R = 0.3 size`, wall `0.4 R`.
    pub fn default_for(size: usize) -> Self {
        let outer = 0.3 * size as f64;
        Self::new(size, outer, 0.4 * outer)
    }
}

/// Exponent of the superellipsoid norm that rounds the cube.
const CAGE_NORM: i32 = 8;

/// Binary rounded-cube shell with a circular opening in every face.
///
/// A voxel is wall when `R - w <= |p|_8 <= R` (an L8 norm gives a cube with
/// rounded edges) and it is not inside one of the face openings.
pub fn nanocage(spec: NanocageSpec) -> Result<VoxelVolume> {
    let NanocageSpec { size, outer_radius, wall_thickness, opening_radius } = spec;
    if !(wall_thickness > 0.0 && wall_thickness < outer_radius && outer_radius < size as f64 / 2.0) {
        return Err(invalid!(
            "nanocage needs 0 < wall ({wall_thickness}) < outer radius ({outer_radius}) < size/2 ({})",
            size as f64 / 2.0
        ));
    }
    if !(opening_radius >= 0.0 && opening_radius < outer_radius) {
        return Err(invalid!("opening radius {opening_radius} must lie in [0, {outer_radius})"));
    }
    let inner = outer_radius - wall_thickness;
    let c = |i: usize| i as f64 - (size as f64 - 1.0) / 2.0;
    Ok(VoxelVolume::from_fn([size; 3], |x, y, z| {
        let p = [c(x), c(y), c(z)];
        let norm = p.iter().map(|v| v.abs().powi(CAGE_NORM)).sum::<f64>().powf(1.0 / CAGE_NORM as f64);
        if norm < inner || norm > outer_radius {
            return 0.0;
        }
        let r2 = opening_radius * opening_radius;
        let in_opening = (0..3).any(|axis| {
            let off: f64 = (0..3).filter(|&a| a != axis).map(|a| p[a] * p[a]).sum();
            off < r2
        });
        if in_opening {
            0.0
        } else {
            1.0
        }
    }))
}

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::geometry::ProjectionGeometry;
use crate::projector::{Projector, TiltSeries};
use crate::volume::VoxelVolume;

/// Floor applied to forward projections before dividing.
pub const EM_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub iterations: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { iterations: 30 }
    }
}

/// Multiplicative EM reconstruction from the first `first_n` projections:
/// `v <- v * BP(p / FP(v)) / BP(1)`.
///
/// Starts from a uniform volume whose projections carry the measured mean
/// mass. All-zero data yields the zero volume.
pub fn em_reconstruct(series: &TiltSeries, first_n: usize, iterations: usize) -> Result<VoxelVolume> {
    if first_n == 0 || first_n > series.len() {
        return Err(invalid!("first_n {first_n} outside 1..={}", series.len()));
    }
    if iterations == 0 {
        return Err(invalid!("EM needs at least one iteration"));
    }
    let (rows, cols) = series.detector_shape;
    let shape = [cols, rows, cols];
    let projector = Projector::new(ProjectionGeometry::for_volume(shape));
    let used = &series.projections[..first_n];
    let taps: Vec<_> = used.iter().map(|p| projector.taps(p.angle_deg)).collect();
    // Work in y-fastest volume / column-major image layout.
    let data: Vec<Vec<f64>> = used
        .iter()
        .map(|p| {
            let mut t = vec![0.0; rows * cols];
            for r in 0..rows {
                for (c, &v) in p.pixels.row(r).iter().enumerate() {
                    t[r + rows * c] = f64::from(v);
                }
            }
            t
        })
        .collect();
    let n_vox: usize = shape.iter().product();

    let mut sensitivity = vec![0.0; n_vox];
    let ones = vec![1.0; rows * cols];
    for t in &taps {
        projector.backproject_lines(t, &ones, &mut sensitivity);
    }
    let covered = sensitivity.iter().filter(|&&s| s > 0.0).count();
    let mean_mass = data.iter().map(|d| d.iter().sum::<f64>()).sum::<f64>() / first_n as f64;
    if mean_mass <= 0.0 || covered == 0 {
        return Ok(VoxelVolume::zeros(shape));
    }

    let init = mean_mass / covered as f64;
    let mut volume: Vec<f64> = sensitivity.iter().map(|&s| if s > 0.0 { init } else { 0.0 }).collect();
    let mut estimate = vec![0.0; rows * cols];
    let mut correction = vec![0.0; n_vox];
    for _ in 0..iterations {
        correction.iter_mut().for_each(|c| *c = 0.0);
        for (t, measured) in taps.iter().zip(&data) {
            estimate.iter_mut().for_each(|e| *e = 0.0);
            projector.project_lines(t, &volume, &mut estimate);
            for (e, &m) in estimate.iter_mut().zip(measured) {
                *e = m / e.max(EM_EPSILON);
            }
            projector.backproject_lines(t, &estimate, &mut correction);
        }
        for ((v, &c), &s) in volume.iter_mut().zip(&correction).zip(&sensitivity) {
            *v = if s > 0.0 { *v * c / s } else { 0.0 };
        }
    }
    let [nx, ny, nz] = shape;
    let mut out = vec![0.0; n_vox];
    for z in 0..nz {
        for x in 0..nx {
            let line = &volume[(x + nx * z) * ny..][..ny];
            for (y, &v) in line.iter().enumerate() {
                out[x + nx * (y + ny * z)] = v;
            }
        }
    }
    Ok(VoxelVolume::from_f64(shape, 1.0, &out))
}

//! Parallel-beam projection about the y axis and acquisition simulation.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // inherent when a dependency links std
use num_traits::Float as _;
use serde::{Deserialize, Serialize};

use crate::damage::{iteration_schedule, DamageParams, DamageSimulator};
use crate::error::{invalid, Result};
use crate::geometry::{ProjectionGeometry, TiltScheme};
use crate::image::Image;
use crate::volume::VoxelVolume;

/// One acquired image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub pixels: Image<f32>,
    pub angle_deg: f64,
    /// 1-based acquisition order.
    pub chrono_index: usize,
    pub time: f64,
}

/// Chronologically ordered projections of one acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltSeries {
    pub projections: Vec<Projection>,
    pub scheme: TiltScheme,
    /// `(rows, cols)`
    pub detector_shape: (usize, usize),
}

impl TiltSeries {
    pub fn new(scheme: TiltScheme, detector_shape: (usize, usize)) -> Self {
        Self { projections: Vec::new(), scheme, detector_shape }
    }

    pub fn len(&self) -> usize {
        self.projections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.projections.is_empty()
    }

    pub fn angles(&self) -> Vec<f64> {
        self.projections.iter().map(|p| p.angle_deg).collect()
    }

    /// Copy holding only the first `n` projections.
    pub fn prefix(&self, n: usize) -> TiltSeries {
        TiltSeries {
            projections: self.projections[..n.min(self.len())].to_vec(),
            scheme: self.scheme.clone(),
            detector_shape: self.detector_shape,
        }
    }

    /// Projections sorted from the lowest to the highest angle, as used for
    /// offline processing. Chronological indices are kept.
    pub fn annular_order(&self) -> Vec<&Projection> {
        let mut sorted: Vec<&Projection> = self.projections.iter().collect();
        sorted.sort_by(|a, b| a.angle_deg.total_cmp(&b.angle_deg));
        sorted
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        for (k, p) in self.projections.iter().enumerate() {
            if p.chrono_index != k + 1 {
                return Err(invalid!("projection {k} has chrono_index {}, expected {}", p.chrono_index, k + 1));
            }
            if p.pixels.shape() != self.detector_shape {
                return Err(invalid!(
                    "projection {} has shape {:?}, series detector is {:?}",
                    p.chrono_index,
                    p.pixels.shape(),
                    self.detector_shape
                ));
            }
            if !self.scheme.contains_angle(p.angle_deg) {
                return Err(invalid!(
                    "projection {} angle {} deg outside annular range +-{}",
                    p.chrono_index,
                    p.angle_deg,
                    self.scheme.annular_range_deg / 2.0
                ));
            }
            if p.pixels.data().iter().any(|v| !(*v >= 0.0)) {
                return Err(invalid!("projection {} has negative or NaN pixels", p.chrono_index));
            }
        }
        Ok(())
    }
}

/// One bilinear tap: detector column, voxel offset within the y = 0 plane,
/// index of the voxel's y-line (`x + nx z`), and weight. The same taps
/// apply to every detector row.
#[derive(Debug, Clone, Copy)]
struct Tap {
    col: u32,
    offset: u32,
    line: u32,
    weight: f64,
}

/// Ray-driven projector with bilinear interpolation in the x-z plane.
///
/// `project` and `backproject` use identical taps, so they are exact
/// adjoints of each other.
#[derive(Debug, Clone)]
pub struct Projector {
    geometry: ProjectionGeometry,
}

/// Taps for one angle, reusable across calls.
#[derive(Debug, Clone)]
pub struct AngleTaps {
    angle_deg: f64,
    taps: Vec<Tap>,
}

impl AngleTaps {
    pub fn angle_deg(&self) -> f64 {
        self.angle_deg
    }
}

impl Projector {
    pub fn new(geometry: ProjectionGeometry) -> Self {
        Self { geometry }
    }

    pub fn geometry(&self) -> &ProjectionGeometry {
        &self.geometry
    }

    pub fn taps(&self, angle_deg: f64) -> AngleTaps {
        let g = &self.geometry;
        let [nx, ny, nz] = g.volume_shape;
        let (sin, cos) = angle_deg.to_radians().sin_cos();
        let samples = g.ray_samples();
        let cx = (nx as f64 - 1.0) / 2.0;
        let cz = (nz as f64 - 1.0) / 2.0;
        let mut taps = Vec::new();
        for col in 0..g.detector_cols() {
            let u = g.col_to_u(col);
            for k in 0..samples {
                let t = ProjectionGeometry::centered(k, samples);
                let xi = u * cos - t * sin + cx;
                let zi = u * sin + t * cos + cz;
                let x0 = xi.floor();
                let z0 = zi.floor();
                let fx = xi - x0;
                let fz = zi - z0;
                let (x0, z0) = (x0 as isize, z0 as isize);
                for (dx, dz, w) in [(0, 0, (1.0 - fx) * (1.0 - fz)), (1, 0, fx * (1.0 - fz)), (0, 1, (1.0 - fx) * fz), (1, 1, fx * fz)] {
                    let x = x0 + dx;
                    let z = z0 + dz;
                    if w == 0.0 || x < 0 || z < 0 || x >= nx as isize || z >= nz as isize {
                        continue;
                    }
                    let (x, z) = (x as usize, z as usize);
                    taps.push(Tap { col: col as u32, offset: (x + nx * ny * z) as u32, line: (x + nx * z) as u32, weight: w });
                }
            }
        }
        // neighbouring samples share bilinear corners
        taps.sort_unstable_by_key(|t| (t.col, t.offset));
        let mut merged: Vec<Tap> = Vec::with_capacity(taps.len());
        for t in taps {
            match merged.last_mut() {
                Some(m) if m.col == t.col && m.offset == t.offset => m.weight += t.weight,
                _ => merged.push(t),
            }
        }
        AngleTaps { angle_deg, taps: merged }
    }

    /// Adds the projection of `volume` into `out` (detector-sized, row-major).
    pub fn project_with(&self, taps: &AngleTaps, volume: &[f64], out: &mut [f64]) {
        let [nx, ny, _] = self.geometry.volume_shape;
        let cols = self.geometry.detector_cols();
        debug_assert_eq!(out.len(), ny * cols);
        for y in 0..ny {
            let row = &mut out[y * cols..(y + 1) * cols];
            let plane = nx * y;
            for tap in &taps.taps {
                row[tap.col as usize] += tap.weight * volume[tap.offset as usize + plane];
            }
        }
    }

    /// Adds the backprojection of `image` into `out` (volume-sized).
    pub fn backproject_with(&self, taps: &AngleTaps, image: &[f64], out: &mut [f64]) {
        let [nx, ny, _] = self.geometry.volume_shape;
        let cols = self.geometry.detector_cols();
        debug_assert_eq!(image.len(), ny * cols);
        for y in 0..ny {
            let row = &image[y * cols..(y + 1) * cols];
            let plane = nx * y;
            for tap in &taps.taps {
                out[tap.offset as usize + plane] += tap.weight * row[tap.col as usize];
            }
        }
    }

    /// `project_with` for a volume stored y-fastest (`y + ny (x + nx z)`),
    /// writing a column-major image (`row + rows col`). The inner loop then
    /// runs over contiguous memory.
    pub(crate) fn project_lines(&self, taps: &AngleTaps, volume: &[f64], out: &mut [f64]) {
        let ny = self.geometry.volume_shape[1];
        for tap in &taps.taps {
            let src = &volume[tap.line as usize * ny..][..ny];
            let dst = &mut out[tap.col as usize * ny..][..ny];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d += tap.weight * v;
            }
        }
    }

    /// Adjoint of `project_lines`.
    pub(crate) fn backproject_lines(&self, taps: &AngleTaps, image: &[f64], out: &mut [f64]) {
        let ny = self.geometry.volume_shape[1];
        for tap in &taps.taps {
            let src = &image[tap.col as usize * ny..][..ny];
            let dst = &mut out[tap.line as usize * ny..][..ny];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d += tap.weight * v;
            }
        }
    }

    pub fn project(&self, volume: &[f64], angle_deg: f64) -> Vec<f64> {
        let (rows, cols) = self.geometry.detector_shape;
        let mut out = vec![0.0; rows * cols];
        self.project_with(&self.taps(angle_deg), volume, &mut out);
        out
    }

    pub fn backproject(&self, image: &[f64], angle_deg: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.geometry.volume_shape.iter().product()];
        self.backproject_with(&self.taps(angle_deg), image, &mut out);
        out
    }
}

/// Line integrals of `v` at tilt `angle_deg`, one detector row per y.
pub fn forward_project(v: &VoxelVolume, angle_deg: f64) -> Image<f32> {
    let geometry = ProjectionGeometry::for_volume(v.shape());
    let (rows, cols) = geometry.detector_shape;
    let values = Projector::new(geometry).project(&v.to_f64(), angle_deg);
    Image::from_vec(rows, cols, values.into_iter().map(|p| p.max(0.0) as f32).collect())
}

/// Deform-then-project loop yielding one projection per scheme angle.
#[derive(Debug, Clone)]
pub struct AcquisitionSimulator {
    damage: DamageSimulator,
    projector: Projector,
    angles: Vec<f64>,
    times: Vec<f64>,
    next: usize,
}

impl AcquisitionSimulator {
    pub fn new(v0: VoxelVolume, scheme: &TiltScheme, params: DamageParams, times: &[f64]) -> Result<Self> {
        if times.len() != scheme.len() {
            return Err(invalid!("{} acquisition times for {} angles", times.len(), scheme.len()));
        }
        let schedule = iteration_schedule(times)?;
        let geometry = ProjectionGeometry::for_volume(v0.shape());
        Ok(Self {
            damage: DamageSimulator::new(v0, params, &schedule)?,
            projector: Projector::new(geometry),
            angles: scheme.angles_deg.clone(),
            times: times.to_vec(),
            next: 0,
        })
    }

    pub fn detector_shape(&self) -> (usize, usize) {
        self.projector.geometry().detector_shape
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }
}

impl Iterator for AcquisitionSimulator {
    type Item = Projection;

    fn next(&mut self) -> Option<Projection> {
        let state = self.damage.advance()?;
        let k = self.next;
        self.next += 1;
        let angle = self.angles[k];
        let (rows, cols) = self.projector.geometry().detector_shape;
        let values = self.projector.project(&state.to_f64(), angle);
        Some(Projection {
            pixels: Image::from_vec(rows, cols, values.into_iter().map(|p| p.max(0.0) as f32).collect()),
            angle_deg: angle,
            chrono_index: k + 1,
            time: self.times[k],
        })
    }
}

/// Simulates a full acquisition: the `j`-th projection images the volume
/// after the cumulative number of deformation iterations up to time `j`.
pub fn simulate_acquisition(v0: &VoxelVolume, scheme: &TiltScheme, params: &DamageParams, times: &[f64]) -> Result<TiltSeries> {
    let sim = AcquisitionSimulator::new(v0.clone(), scheme, *params, times)?;
    let detector_shape = sim.detector_shape();
    let mut series = TiltSeries::new(scheme.clone(), detector_shape);
    series.projections.extend(sim);
    Ok(series)
}

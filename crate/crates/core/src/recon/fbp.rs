use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)] // inherent when a dependency links std
use num_traits::Float as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fft::{next_pow2, Complex, Direction, Fft};
use crate::geometry::ProjectionGeometry;
use crate::image::Image;
use crate::projector::TiltSeries;

/// Ram-Lak ramp filter applied along detector rows.
///
/// The band-limited spatial kernel (`1/4` at 0, `-1/(pi n)^2` at odd `n`)
/// is transformed once; rows are zero-padded to a power of two at least
/// twice their length so the convolution is linear.
#[derive(Debug, Clone)]
pub struct RampFilter {
    cols: usize,
    fft: Fft,
    response: Vec<f64>,
}

impl RampFilter {
    pub fn new(cols: usize) -> Self {
        let len = next_pow2(2 * cols);
        let fft = Fft::new(len);
        let mut kernel: Vec<Complex> = (0..len)
            .map(|k| {
                let n = if k <= len / 2 { k as isize } else { k as isize - len as isize };
                let value = if n == 0 {
                    0.25
                } else if n % 2 != 0 {
                    -1.0 / (PI * n as f64).powi(2)
                } else {
                    0.0
                };
                Complex::new(value, 0.0)
            })
            .collect();
        fft.process(&mut kernel, Direction::Forward);
        let response = kernel.iter().map(|c| c.re).collect();
        Self { cols, fft, response }
    }

    pub fn filter_row(&self, row: &[f64], out: &mut [f64]) {
        let mut buf = vec![Complex::ZERO; self.fft.len()];
        for (b, &v) in buf.iter_mut().zip(row) {
            b.re = v;
        }
        self.fft.process(&mut buf, Direction::Forward);
        for (b, &h) in buf.iter_mut().zip(&self.response) {
            *b = *b * h;
        }
        self.fft.process(&mut buf, Direction::Inverse);
        for (o, b) in out.iter_mut().zip(&buf[..self.cols]) {
            *o = b.re;
        }
    }

    pub fn filter(&self, image: &Image<f32>) -> Image<f64> {
        let (rows, cols) = image.shape();
        assert_eq!(cols, self.cols, "filter built for {} columns", self.cols);
        let mut out = Image::zeros(rows, cols);
        let mut row = vec![0.0; cols];
        for r in 0..rows {
            for (d, &s) in row.iter_mut().zip(image.row(r)) {
                *d = f64::from(s);
            }
            self.filter_row(&row, &mut out.data_mut()[r * cols..(r + 1) * cols]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Xy,
    Yz,
    Xz,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Xy, Plane::Yz, Plane::Xz];

    pub fn name(self) -> &'static str {
        match self {
            Plane::Xy => "xy",
            Plane::Yz => "yz",
            Plane::Xz => "xz",
        }
    }
}

/// Placement of one reconstructed slice.
///
/// `offset` moves the plane along its normal, from the volume centre.
/// `rotation_deg` turns the plane about an axis lying in it: the y axis for
/// `xy` and `yz`, the z axis for `xz`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub plane: Plane,
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub rotation_deg: f64,
}

impl SliceSpec {
    pub fn through_origin(plane: Plane) -> Self {
        Self { plane, offset: 0.0, rotation_deg: 0.0 }
    }

    /// The xy, yz and xz planes through the centre.
    pub fn default_set() -> [SliceSpec; 3] {
        Plane::ALL.map(Self::through_origin)
    }

    /// Same planes turned by `rotation_deg`.
    pub fn rotated_set(rotation_deg: f64) -> [SliceSpec; 3] {
        Plane::ALL.map(|plane| Self { plane, offset: 0.0, rotation_deg })
    }

    /// `(rows, cols)` of the slice image for a volume of `shape`.
    pub fn image_shape(&self, shape: [usize; 3]) -> (usize, usize) {
        let [nx, ny, nz] = shape;
        match self.plane {
            Plane::Xy => (ny, nx),
            Plane::Yz => (ny, nz),
            Plane::Xz => (nz, nx),
        }
    }

    pub fn validate(&self, shape: [usize; 3]) -> Result<()> {
        let axis = match self.plane {
            Plane::Xy => 2,
            Plane::Yz => 0,
            Plane::Xz => 1,
        };
        let half = (shape[axis] as f64 - 1.0) / 2.0;
        if !(self.offset.abs() <= half) || !self.rotation_deg.is_finite() {
            return Err(invalid!("{} slice offset {} outside +-{half}", self.plane.name(), self.offset));
        }
        Ok(())
    }

    /// Centered volume coordinates of every slice pixel, row-major.
    pub fn points(&self, shape: [usize; 3]) -> Vec<[f64; 3]> {
        let [nx, ny, nz] = shape;
        let (rows, cols) = self.image_shape(shape);
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let mut pts = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for k in 0..cols {
                let p = match self.plane {
                    Plane::Xy => {
                        let (x, y, z) = (ProjectionGeometry::centered(k, nx), ProjectionGeometry::centered(r, ny), self.offset);
                        [x * c + z * s, y, -x * s + z * c]
                    }
                    Plane::Yz => {
                        let (x, y, z) = (self.offset, ProjectionGeometry::centered(r, ny), ProjectionGeometry::centered(k, nz));
                        [x * c + z * s, y, -x * s + z * c]
                    }
                    Plane::Xz => {
                        let (x, y, z) = (ProjectionGeometry::centered(k, nx), self.offset, ProjectionGeometry::centered(r, nz));
                        [x * c - y * s, x * s + y * c, z]
                    }
                };
                pts.push(p);
            }
        }
        pts
    }
}

/// The three slices reconstructed from the first `n_projections` images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthosliceSet {
    pub slices: [Image<f64>; 3],
    pub specs: [SliceSpec; 3],
    pub n_projections: usize,
    /// Set on the first set after the slice placement changed.
    #[serde(default)]
    pub restarted: bool,
}

impl OrthosliceSet {
    /// All pixels of the three slices, in order.
    pub fn pixels(&self) -> impl Iterator<Item = f64> + Clone + '_ {
        self.slices.iter().flat_map(|s| s.data().iter().copied())
    }

    pub fn pixel_count(&self) -> usize {
        self.slices.iter().map(|s| s.data().len()).sum()
    }
}

/// Adds the backprojection of one filtered projection at the given points.
fn accumulate(geometry: &ProjectionGeometry, points: &[[f64; 3]], filtered: &Image<f64>, angle_deg: f64, acc: &mut [f64]) {
    let (s, c) = angle_deg.to_radians().sin_cos();
    let (rows, cols) = filtered.shape();
    for (a, p) in acc.iter_mut().zip(points) {
        let col = geometry.u_to_col(p[0] * c + p[2] * s);
        let row = geometry.y_to_row(p[1]);
        if col <= -1.0 || row <= -1.0 || col >= cols as f64 || row >= rows as f64 {
            continue;
        }
        let (c0, r0) = (col.floor(), row.floor());
        let (fc, fr) = (col - c0, row - r0);
        let (c0, r0) = (c0 as isize, r0 as isize);
        let sample = |r: isize, k: isize| -> f64 {
            if r < 0 || k < 0 || r >= rows as isize || k >= cols as isize {
                0.0
            } else {
                filtered.get(r as usize, k as usize)
            }
        };
        *a += (1.0 - fr) * ((1.0 - fc) * sample(r0, c0) + fc * sample(r0, c0 + 1))
            + fr * ((1.0 - fc) * sample(r0 + 1, c0) + fc * sample(r0 + 1, c0 + 1));
    }
}

fn normalization(n: usize) -> f64 {
    PI / (2.0 * n as f64)
}

fn volume_shape(detector_shape: (usize, usize)) -> [usize; 3] {
    let (rows, cols) = detector_shape;
    [cols, rows, cols]
}

/// Filtered backprojection of the first `first_n` projections onto the
/// pixels of one slice only.
pub fn fbp_slice(series: &TiltSeries, first_n: usize, spec: &SliceSpec) -> Result<Image<f64>> {
    if first_n == 0 || first_n > series.len() {
        return Err(invalid!("first_n {first_n} outside 1..={}", series.len()));
    }
    let shape = volume_shape(series.detector_shape);
    spec.validate(shape)?;
    let geometry = ProjectionGeometry::for_volume(shape);
    let filter = RampFilter::new(geometry.detector_cols());
    let points = spec.points(shape);
    let mut acc = vec![0.0; points.len()];
    for p in &series.projections[..first_n] {
        accumulate(&geometry, &points, &filter.filter(&p.pixels), p.angle_deg, &mut acc);
    }
    let scale = normalization(first_n);
    let (rows, cols) = spec.image_shape(shape);
    Ok(Image::from_vec(rows, cols, acc.into_iter().map(|v| v * scale).collect()))
}

/// Incremental orthoslice reconstruction.
///
/// Each new projection is filtered once and its backprojection added to
/// running per-slice sums; the normalization is applied when a set is
/// emitted. A placement change takes effect with the next projection and
/// rebuilds the sums from every stored filtered projection.
#[derive(Debug, Clone)]
pub struct StreamingReconstructor {
    geometry: ProjectionGeometry,
    filter: RampFilter,
    specs: [SliceSpec; 3],
    points: [Vec<[f64; 3]>; 3],
    sums: [Vec<f64>; 3],
    filtered: Vec<(f64, Image<f64>)>,
    pending: Option<[SliceSpec; 3]>,
}

impl StreamingReconstructor {
    pub fn new(detector_shape: (usize, usize), specs: [SliceSpec; 3]) -> Result<Self> {
        let shape = volume_shape(detector_shape);
        for s in &specs {
            s.validate(shape)?;
        }
        let geometry = ProjectionGeometry::for_volume(shape);
        let points = specs.map(|s| s.points(shape));
        let sums = [0, 1, 2].map(|i| vec![0.0; points[i].len()]);
        Ok(Self { filter: RampFilter::new(geometry.detector_cols()), geometry, specs, points, sums, filtered: Vec::new(), pending: None })
    }

    pub fn specs(&self) -> &[SliceSpec; 3] {
        self.pending.as_ref().unwrap_or(&self.specs)
    }

    pub fn n_projections(&self) -> usize {
        self.filtered.len()
    }

    /// Requests new slice placements for the next emitted set. Returns
    /// whether anything changed.
    pub fn reorient(&mut self, specs: [SliceSpec; 3]) -> Result<bool> {
        let shape = self.geometry.volume_shape;
        for s in &specs {
            s.validate(shape)?;
        }
        if specs == self.specs {
            self.pending = None;
            return Ok(false);
        }
        self.pending = Some(specs);
        Ok(true)
    }

    /// Ingests the next projection in acquisition order and returns `O_N`.
    pub fn push(&mut self, pixels: &Image<f32>, angle_deg: f64) -> Result<OrthosliceSet> {
        if pixels.shape() != self.geometry.detector_shape {
            return Err(invalid!("projection shape {:?} does not match detector {:?}", pixels.shape(), self.geometry.detector_shape));
        }
        let filtered = self.filter.filter(pixels);
        let restarted = if let Some(specs) = self.pending.take() {
            let shape = self.geometry.volume_shape;
            self.specs = specs;
            self.points = specs.map(|s| s.points(shape));
            for (sum, pts) in self.sums.iter_mut().zip(&self.points) {
                *sum = vec![0.0; pts.len()];
                for (angle, f) in &self.filtered {
                    accumulate(&self.geometry, pts, f, *angle, sum);
                }
            }
            true
        } else {
            false
        };
        for (sum, pts) in self.sums.iter_mut().zip(&self.points) {
            accumulate(&self.geometry, pts, &filtered, angle_deg, sum);
        }
        self.filtered.push((angle_deg, filtered));
        let mut set = self.current().expect("at least one projection");
        set.restarted = restarted;
        Ok(set)
    }

    /// Orthoslices for every projection ingested so far.
    pub fn current(&self) -> Option<OrthosliceSet> {
        let n = self.filtered.len();
        if n == 0 {
            return None;
        }
        let scale = normalization(n);
        let shape = self.geometry.volume_shape;
        let slices = [0, 1, 2].map(|i| {
            let (rows, cols) = self.specs[i].image_shape(shape);
            Image::from_vec(rows, cols, self.sums[i].iter().map(|v| v * scale).collect())
        });
        Some(OrthosliceSet { slices, specs: self.specs, n_projections: n, restarted: false })
    }
}

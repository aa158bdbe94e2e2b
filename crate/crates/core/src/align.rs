//! Translational alignment of tilt-series projections.
//!
//! Each image is reduced to its largest particle (Otsu foreground, largest
//! 8-connected component) before correlation so that clutter elsewhere in
//! the field of view cannot pull the registration. Registration is either
//! against the previous image (chronological) or against the already
//! processed image closest in angle, which matters for golden-ratio series
//! where consecutive images can be almost 90 degrees apart.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // inherent when a dependency links std
use num_traits::Float as _;
use serde::{Deserialize, Serialize};

use crate::error::{degenerate, invalid, Result};
use crate::fft::{fft2, next_pow2, Complex, Direction};
use crate::image::Image;
use crate::projector::{Projection, TiltSeries};
use crate::recon::otsu_threshold;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    Chronological,
    NearestAngle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignOptions {
    pub mode: AlignMode,
    /// Move the particle's centre of mass to the detector centre before
    /// correlating.
    #[serde(default)]
    pub center: bool,
    /// Refine the correlation peak with a parabolic fit.
    #[serde(default)]
    pub subpixel: bool,
    /// Largest shift considered per axis, in pixels.
    #[serde(default)]
    pub max_shift: Option<usize>,
}

impl AlignOptions {
    pub fn new(mode: AlignMode) -> Self {
        Self { mode, center: false, subpixel: false, max_shift: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    /// `(dy, dx)` applied to each projection, chronological order.
    pub shifts: Vec<(f64, f64)>,
    pub mode: AlignMode,
    /// Chronological index (1-based) each projection was registered
    /// against; `None` for the first one.
    pub reference_map: Vec<Option<usize>>,
}

/// Keeps the largest 8-connected Otsu-foreground component.
pub fn mask_largest_particle(image: &Image<f32>) -> Result<Image<bool>> {
    let threshold = otsu_threshold(image.data())?;
    let (rows, cols) = image.shape();
    let fg: Vec<bool> = image.data().iter().map(|&v| f64::from(v) > threshold).collect();
    let mut label = vec![0u32; rows * cols];
    let mut best = (0usize, 0u32);
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..rows * cols {
        if !fg[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (r, c) = (i / cols, i % cols);
            for nr in r.saturating_sub(1)..=(r + 1).min(rows - 1) {
                for nc in c.saturating_sub(1)..=(c + 1).min(cols - 1) {
                    let j = nr * cols + nc;
                    if fg[j] && label[j] == 0 {
                        label[j] = next;
                        queue.push_back(j);
                    }
                }
            }
        }
        if size > best.0 {
            best = (size, next);
        }
    }
    Ok(Image::from_vec(rows, cols, label.into_iter().map(|l| l != 0 && l == best.1).collect()))
}

/// Image with everything outside the largest particle set to zero.
pub fn masked(image: &Image<f32>) -> Result<Image<f32>> {
    let mask = mask_largest_particle(image)?;
    Ok(Image::from_vec(image.rows(), image.cols(), image.data().iter().zip(mask.data()).map(|(&v, &m)| if m { v } else { 0.0 }).collect()))
}

/// `out(p) = image(p - shift)`, zero outside. Integral shifts copy pixels;
/// fractional ones interpolate bilinearly.
pub fn shift_image(image: &Image<f32>, dy: f64, dx: f64) -> Image<f32> {
    let (rows, cols) = image.shape();
    let mut out = Image::zeros(rows, cols);
    let sample = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= rows as isize || c >= cols as isize {
            0.0
        } else {
            f64::from(image.get(r as usize, c as usize))
        }
    };
    let integral = dy.fract() == 0.0 && dx.fract() == 0.0;
    for r in 0..rows {
        for c in 0..cols {
            let sy = r as f64 - dy;
            let sx = c as f64 - dx;
            let v = if integral {
                sample(sy as isize, sx as isize)
            } else {
                let (y0, x0) = (sy.floor(), sx.floor());
                let (fy, fx) = (sy - y0, sx - x0);
                let (y0, x0) = (y0 as isize, x0 as isize);
                (1.0 - fy) * ((1.0 - fx) * sample(y0, x0) + fx * sample(y0, x0 + 1))
                    + fy * ((1.0 - fx) * sample(y0 + 1, x0) + fx * sample(y0 + 1, x0 + 1))
            };
            out.set(r, c, v.max(0.0) as f32);
        }
    }
    out
}

/// Normalized cross-correlation surface over all integer shifts, computed
/// with zero-padded FFTs. Entry `(sy, sx)` (wrapped) scores moving `image`
/// by `(sy, sx)` onto `reference`.
fn correlation(image: &Image<f32>, reference: &Image<f32>) -> (Vec<f64>, usize, usize) {
    let (rows, cols) = image.shape();
    let (pr, pc) = (next_pow2(2 * rows), next_pow2(2 * cols));
    let load = |img: &Image<f32>| {
        let mut buf = vec![Complex::ZERO; pr * pc];
        for r in 0..rows {
            for c in 0..cols {
                buf[r * pc + c].re = f64::from(img.get(r, c));
            }
        }
        fft2(&mut buf, pr, pc, Direction::Forward);
        buf
    };
    let fi = load(image);
    let mut fr = load(reference);
    for (a, b) in fr.iter_mut().zip(&fi) {
        *a = *a * b.conj();
    }
    fft2(&mut fr, pr, pc, Direction::Inverse);
    let norm = |img: &Image<f32>| img.data().iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
    let scale = 1.0 / (norm(image) * norm(reference));
    (fr.into_iter().map(|c| c.re * scale).collect(), pr, pc)
}

fn parabolic_offset(left: f64, mid: f64, right: f64) -> f64 {
    let denom = left - 2.0 * mid + right;
    if denom.abs() < 1e-15 {
        0.0
    } else {
        (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
    }
}

/// Shift `(dy, dx)` that moves `image` onto `reference`, both reduced to
/// their largest particle first.
pub fn align_translation(image: &Image<f32>, reference: &Image<f32>) -> Result<(f64, f64)> {
    align_translation_with(image, reference, false, None)
}

pub fn align_translation_with(image: &Image<f32>, reference: &Image<f32>, subpixel: bool, max_shift: Option<usize>) -> Result<(f64, f64)> {
    if image.shape() != reference.shape() {
        return Err(invalid!("cannot register {:?} against {:?}", image.shape(), reference.shape()));
    }
    let a = masked(image)?;
    let b = masked(reference)?;
    let (surface, pr, pc) = correlation(&a, &b);
    let (rows, cols) = image.shape();
    let limit_r = max_shift.map_or(rows - 1, |m| m.min(rows - 1)) as isize;
    let limit_c = max_shift.map_or(cols - 1, |m| m.min(cols - 1)) as isize;
    let mut best: Option<(f64, isize, isize)> = None;
    for sy in -limit_r..=limit_r {
        for sx in -limit_c..=limit_c {
            let v = surface[sy.rem_euclid(pr as isize) as usize * pc + sx.rem_euclid(pc as isize) as usize];
            let better = match best {
                None => true,
                Some((bv, by, bx)) => v > bv || (v == bv && sy.abs() + sx.abs() < by.abs() + bx.abs()),
            };
            if better {
                best = Some((v, sy, sx));
            }
        }
    }
    let (peak, sy, sx) = best.ok_or_else(|| degenerate!("empty correlation surface"))?;
    if !peak.is_finite() {
        return Err(degenerate!("correlation undefined for empty masked images"));
    }
    let (mut dy, mut dx) = (sy as f64, sx as f64);
    if subpixel {
        let at = |y: isize, x: isize| surface[y.rem_euclid(pr as isize) as usize * pc + x.rem_euclid(pc as isize) as usize];
        dy += parabolic_offset(at(sy - 1, sx), peak, at(sy + 1, sx));
        dx += parabolic_offset(at(sy, sx - 1), peak, at(sy, sx + 1));
    }
    Ok((dy, dx))
}

/// Integer shift that moves the particle's centre of mass to the image
/// centre; zero if the image has no particle.
pub fn centering_shift(image: &Image<f32>) -> (f64, f64) {
    let Ok(m) = masked(image) else {
        return (0.0, 0.0);
    };
    let (rows, cols) = m.shape();
    let (mut total, mut sy, mut sx) = (0.0, 0.0, 0.0);
    for r in 0..rows {
        for c in 0..cols {
            let v = f64::from(m.get(r, c));
            total += v;
            sy += v * r as f64;
            sx += v * c as f64;
        }
    }
    if total == 0.0 {
        return (0.0, 0.0);
    }
    let cy = (rows as f64 - 1.0) / 2.0 - sy / total;
    let cx = (cols as f64 - 1.0) / 2.0 - sx / total;
    (cy.round(), cx.round())
}

/// Projection-by-projection aligner used by streaming consumers.
#[derive(Debug, Clone)]
pub struct OnlineAligner {
    options: AlignOptions,
    angles: Vec<f64>,
    aligned: Vec<Image<f32>>,
    result: AlignmentResult,
}

impl OnlineAligner {
    pub fn new(options: AlignOptions) -> Self {
        Self {
            options,
            angles: Vec::new(),
            aligned: Vec::new(),
            result: AlignmentResult { shifts: Vec::new(), mode: options.mode, reference_map: Vec::new() },
        }
    }

    fn reference_for(&self, angle_deg: f64) -> Option<usize> {
        let last = self.angles.len().checked_sub(1)?;
        match self.options.mode {
            AlignMode::Chronological => Some(last),
            AlignMode::NearestAngle => {
                let mut best = 0;
                for (k, a) in self.angles.iter().enumerate() {
                    if (a - angle_deg).abs() < (self.angles[best] - angle_deg).abs() {
                        best = k;
                    }
                }
                Some(best)
            }
        }
    }

    /// Registers the next projection and returns its aligned pixels.
    /// Degenerate images (nothing to correlate) are passed through with
    /// the centring shift only.
    pub fn push(&mut self, pixels: &Image<f32>, angle_deg: f64) -> &Image<f32> {
        let (cy, cx) = if self.options.center { centering_shift(pixels) } else { (0.0, 0.0) };
        let reference = self.reference_for(angle_deg);
        let (dy, dx) = match reference {
            None => (cy, cx),
            Some(r) => {
                let centered = if (cy, cx) == (0.0, 0.0) { pixels.clone() } else { shift_image(pixels, cy, cx) };
                let (sy, sx) = align_translation_with(&centered, &self.aligned[r], self.options.subpixel, self.options.max_shift)
                    .unwrap_or((0.0, 0.0));
                (cy + sy, cx + sx)
            }
        };
        let aligned = if (dy, dx) == (0.0, 0.0) { pixels.clone() } else { shift_image(pixels, dy, dx) };
        self.angles.push(angle_deg);
        self.aligned.push(aligned);
        self.result.shifts.push((dy, dx));
        self.result.reference_map.push(reference.map(|r| r + 1));
        self.aligned.last().expect("just pushed")
    }

    pub fn result(&self) -> &AlignmentResult {
        &self.result
    }

    pub fn into_result(self) -> AlignmentResult {
        self.result
    }
}

/// Aligns a whole series in acquisition order.
pub fn align_series(series: &TiltSeries, options: AlignOptions) -> (AlignmentResult, TiltSeries) {
    let mut aligner = OnlineAligner::new(options);
    let mut out = TiltSeries::new(series.scheme.clone(), series.detector_shape);
    for p in &series.projections {
        let pixels = aligner.push(&p.pixels, p.angle_deg).clone();
        out.projections.push(Projection { pixels, ..p.clone() });
    }
    (aligner.into_result(), out)
}

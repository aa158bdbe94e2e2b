//! Iterative beam-damage simulation.
//!
//! Each deformation iteration applies an elastic step (a smooth random
//! multiplicative field) followed by a knock-on step (probabilistic removal
//! of exposed voxels). Acquisition times are turned into a number of
//! iterations per projection.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // inherent when a dependency links std
use num_traits::Float as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::volume::VoxelVolume;

/// Deformation strength and randomness of the damage model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DamageParams {
    /// Magnitude of the elastic multiplicative field.
    pub beta1: f64,
    /// Base knock-on probability, in `[0, 1)`.
    pub beta2: f64,
    /// Standard deviation (voxels) of the Gaussian that smooths the mask.
    pub gaussian_sigma: f64,
    pub seed: u64,
}

/// Named damage presets: (name, beta1, beta2).
pub const PRESETS: [(&str, f64, f64); 4] = [("NC-1", 0.0, 0.0), ("NC-2", 0.3, 0.03), ("NC-3", 0.55, 0.055), ("NC-4", 0.6, 0.06)];

impl DamageParams {
    pub fn new(beta1: f64, beta2: f64, gaussian_sigma: f64, seed: u64) -> Result<Self> {
        let p = Self { beta1, beta2, gaussian_sigma, seed };
        p.validate()?;
        Ok(p)
    }

    /// No deformation at all.
    pub fn none() -> Self {
        Self { beta1: 0.0, beta2: 0.0, gaussian_sigma: 1.0, seed: 0 }
    }

    /// Smoothing width scaled from 10 voxels at a 256-voxel field of view.
    pub fn default_sigma(volume_size: usize) -> f64 {
        10.0 * volume_size as f64 / 256.0
    }

    /// Looks up a named preset (`NC-1` .. `NC-4`, case-insensitive).
    pub fn preset(name: &str, volume_size: usize, seed: u64) -> Result<Self> {
        let (_, b1, b2) =
            PRESETS.iter().find(|(n, _, _)| n.eq_ignore_ascii_case(name)).ok_or_else(|| invalid!("unknown damage preset {name:?}"))?;
        Self::new(*b1, *b2, Self::default_sigma(volume_size), seed)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta1 >= 0.0 && self.beta1.is_finite()) {
            return Err(invalid!("beta1 {} must be >= 0", self.beta1));
        }
        if !(self.beta2 >= 0.0 && self.beta2 < 1.0) {
            return Err(invalid!("beta2 {} must lie in [0, 1)", self.beta2));
        }
        if !(self.gaussian_sigma > 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(invalid!("gaussian_sigma {} must be > 0", self.gaussian_sigma));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.beta1 == 0.0 && self.beta2 == 0.0
    }
}

/// Deformation iterations to run before each projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSchedule {
    pub times: Vec<f64>,
    pub iterations: Vec<usize>,
}

impl IterationSchedule {
    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    pub fn total_iterations(&self) -> usize {
        self.iterations.iter().sum()
    }

    /// Cumulative iteration count at which each projection is taken.
    pub fn cumulative(&self) -> Vec<usize> {
        self.iterations
            .iter()
            .scan(0, |acc, &n| {
                *acc += n;
                Some(*acc)
            })
            .collect()
    }
}

/// `N_I = round(t / min(t))`, rounding half away from zero.
pub fn iteration_schedule(times: &[f64]) -> Result<IterationSchedule> {
    if times.is_empty() {
        return Err(invalid!("acquisition times are empty"));
    }
    if let Some(t) = times.iter().find(|&&t| !(t > 0.0 && t.is_finite())) {
        return Err(invalid!("acquisition time {t} must be positive"));
    }
    let min = times.iter().copied().fold(f64::INFINITY, f64::min);
    // f64::round rounds half away from zero
    let iterations = times.iter().map(|&t| ((t / min).round() as usize).max(1)).collect();
    Ok(IterationSchedule { times: times.to_vec(), iterations })
}

/// Equal time between consecutive projections: one deformation iteration
/// per projection.
pub fn uniform_times(n: usize) -> Vec<f64> {
    vec![1.0; n]
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian smoothing with zero padding outside the volume.
pub fn gaussian_smooth(data: &[f64], shape: [usize; 3], sigma: f64) -> Vec<f64> {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let [nx, ny, nz] = shape;
    let strides = [1usize, nx, nx * ny];
    let lens = [nx, ny, nz];
    let mut src = data.to_vec();
    let mut dst = vec![0.0; data.len()];
    for axis in 0..3 {
        let stride = strides[axis];
        let n = lens[axis] as isize;
        for (i, out) in dst.iter_mut().enumerate() {
            let pos = ((i / stride) % lens[axis]) as isize;
            let lo = (-radius).max(-pos);
            let hi = radius.min(n - 1 - pos);
            let mut acc = 0.0;
            for off in lo..=hi {
                let j = (i as isize + off * stride as isize) as usize;
                acc += kernel[(off + radius) as usize] * src[j];
            }
            *out = acc;
        }
        core::mem::swap(&mut src, &mut dst);
    }
    src
}

/// Smoothed random field rescaled to span `[-1, 1]`.
fn smooth_mask<R: Rng>(shape: [usize; 3], sigma: f64, rng: &mut R) -> Vec<f64> {
    let n: usize = shape.iter().product();
    let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
    let mut mask = gaussian_smooth(&raw, shape, sigma);
    let peak = mask.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        mask.iter_mut().for_each(|v| *v /= peak);
    }
    mask
}

fn elastic_step<R: Rng>(v: &mut VoxelVolume, params: &DamageParams, rng: &mut R) {
    if params.beta1 == 0.0 {
        return;
    }
    let mask = smooth_mask(v.shape(), params.gaussian_sigma, rng);
    for (voxel, m) in v.data_mut().iter_mut().zip(mask) {
        let scaled = f64::from(*voxel) * (1.0 + params.beta1 * m);
        *voxel = if scaled > 0.0 { scaled as f32 } else { 0.0 };
    }
}

/// Nonzero voxels in the 3x3x3 block around `(x, y, z)`, centre included.
fn nonzero_neighbors(v: &VoxelVolume, x: usize, y: usize, z: usize) -> u32 {
    let [nx, ny, nz] = v.shape();
    let mut count = 0;
    for zz in z.saturating_sub(1)..=(z + 1).min(nz - 1) {
        for yy in y.saturating_sub(1)..=(y + 1).min(ny - 1) {
            for xx in x.saturating_sub(1)..=(x + 1).min(nx - 1) {
                if v.get(xx, yy, zz) != 0.0 {
                    count += 1;
                }
            }
        }
    }
    count
}

/// Removal probability of a nonzero voxel with `nn` nonzero cells in its
/// 27-cell neighbourhood.
pub fn knockon_probability(nn: u32, beta2: f64) -> f64 {
    if nn >= 27 {
        0.0
    } else {
        beta2.powf(nn as f64 / 3.0)
    }
}

fn knockon_step<R: Rng>(v: &mut VoxelVolume, params: &DamageParams, rng: &mut R) {
    if params.beta2 == 0.0 {
        return;
    }
    let [nx, ny, nz] = v.shape();
    let mut removed = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if v.get(x, y, z) == 0.0 {
                    continue;
                }
                let nn = nonzero_neighbors(v, x, y, z);
                if nn >= 27 {
                    continue;
                }
                if rng.gen::<f64>() < knockon_probability(nn, params.beta2) {
                    removed.push(v.index(x, y, z));
                }
            }
        }
    }
    let data = v.data_mut();
    for i in removed {
        data[i] = 0.0;
    }
}

/// One elastic step `V <- (1 + beta1 M) * V`, seeded from `params.seed`.
pub fn elastic_deform(v: &VoxelVolume, params: &DamageParams) -> VoxelVolume {
    let mut out = v.clone();
    elastic_step(&mut out, params, &mut ChaCha8Rng::seed_from_u64(params.seed));
    out
}

/// One knock-on step, seeded from `params.seed`.
pub fn knockon_deform(v: &VoxelVolume, params: &DamageParams) -> VoxelVolume {
    let mut out = v.clone();
    knockon_step(&mut out, params, &mut ChaCha8Rng::seed_from_u64(params.seed));
    out
}

/// Lazily advances a volume through the damage schedule, yielding the state
/// at each projection time.
#[derive(Debug, Clone)]
pub struct DamageSimulator {
    state: VoxelVolume,
    params: DamageParams,
    rng: ChaCha8Rng,
    iterations: Vec<usize>,
    next: usize,
}

impl DamageSimulator {
    pub fn new(v0: VoxelVolume, params: DamageParams, schedule: &IterationSchedule) -> Result<Self> {
        params.validate()?;
        Ok(Self { state: v0, params, rng: ChaCha8Rng::seed_from_u64(params.seed), iterations: schedule.iterations.clone(), next: 0 })
    }

    fn deform_once(&mut self) {
        elastic_step(&mut self.state, &self.params, &mut self.rng);
        knockon_step(&mut self.state, &self.params, &mut self.rng);
    }

    /// Runs the iterations preceding the next projection and returns the
    /// resulting state.
    pub fn advance(&mut self) -> Option<&VoxelVolume> {
        let n = *self.iterations.get(self.next)?;
        self.next += 1;
        if !self.params.is_identity() {
            for _ in 0..n {
                self.deform_once();
            }
        }
        Some(&self.state)
    }

    pub fn remaining(&self) -> usize {
        self.iterations.len() - self.next
    }
}

/// Volume state at every projection time of `schedule`.
pub fn damage_sequence(v0: &VoxelVolume, params: &DamageParams, schedule: &IterationSchedule) -> Result<Vec<VoxelVolume>> {
    let mut sim = DamageSimulator::new(v0.clone(), *params, schedule)?;
    let mut out = Vec::with_capacity(schedule.len());
    while let Some(state) = sim.advance() {
        out.push(state.clone());
    }
    Ok(out)
}

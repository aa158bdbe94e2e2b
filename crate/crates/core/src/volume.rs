use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Non-negative scalar grid, x fastest: `index = x + nx * (y + ny * z)`.
///
/// The tilt axis is y throughout the crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelVolume {
    shape: [usize; 3],
    voxel_size: f64,
    data: Vec<f32>,
}

impl VoxelVolume {
    pub fn zeros(shape: [usize; 3]) -> Self {
        Self { shape, voxel_size: 1.0, data: vec![0.0; shape.iter().product()] }
    }

    /// Validates shape, length and non-negativity.
    pub fn from_vec(shape: [usize; 3], voxel_size: f64, data: Vec<f32>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(invalid!("volume shape {shape:?} has an empty axis"));
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(invalid!("volume buffer has {} values, shape {shape:?} needs {expected}", data.len()));
        }
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(invalid!("voxel size {voxel_size} must be positive"));
        }
        if let Some(bad) = data.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(invalid!("volume contains invalid value {bad}"));
        }
        Ok(Self { shape, voxel_size, data })
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel index.
    pub fn from_fn(shape: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let [nx, ny, nz] = shape;
        let mut data = Vec::with_capacity(nx * ny * nz);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Self { shape, voxel_size: 1.0, data }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn with_voxel_size(mut self, voxel_size: f64) -> Self {
        self.voxel_size = voxel_size;
        self
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.shape[0] * (y + self.shape[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: f32) {
        let i = self.index(x, y, z);
        self.data[i] = value.max(0.0);
    }

    pub fn nonzero_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    /// Stores `values` clamped to `>= 0`.
    pub fn from_f64(shape: [usize; 3], voxel_size: f64, values: &[f64]) -> Self {
        assert_eq!(values.len(), shape.iter().product::<usize>());
        Self { shape, voxel_size, data: values.iter().map(|&v| if v > 0.0 { v as f32 } else { 0.0 }).collect() }
    }
}

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{degenerate, Result};

pub const OTSU_BINS: usize = 256;

/// Otsu threshold over a 256-bin histogram spanning `[min, max]`.
///
/// Returns the upper edge of the last background bin; values strictly
/// above it are foreground. Ties in between-class variance resolve to the
/// lowest bin.
pub fn otsu_threshold<T: Copy + Into<f64>>(values: &[T]) -> Result<f64> {
    let (min, max) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        let v = v.into();
        (lo.min(v), hi.max(v))
    });
    if values.is_empty() || !(max > min) {
        return Err(degenerate!("Otsu threshold needs at least two distinct values"));
    }
    let width = (max - min) / OTSU_BINS as f64;
    let mut hist = vec![0u64; OTSU_BINS];
    for &v in values {
        let bin = ((v.into() - min) / width) as usize;
        hist[bin.min(OTSU_BINS - 1)] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_bin) = (-1.0, 0);
    for (t, &count) in hist.iter().enumerate().take(OTSU_BINS - 1) {
        w0 += count as f64;
        sum0 += t as f64 * count as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let diff = sum0 / w0 - (sum_all - sum0) / w1;
        let between = w0 * w1 * diff * diff;
        if between > best {
            best = between;
            best_bin = t;
        }
    }
    Ok(min + (best_bin + 1) as f64 * width)
}

/// `1.0` where the value exceeds the Otsu threshold, else `0.0`. A constant
/// input binarizes to all background.
pub fn binarize<T: Copy + Into<f64>>(values: &[T]) -> Vec<f64> {
    match otsu_threshold(values) {
        Ok(t) => values.iter().map(|&v| if v.into() > t { 1.0 } else { 0.0 }).collect(),
        Err(_) => vec![0.0; values.len()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_level_image_splits_between_levels() {
        let data: Vec<f64> = (0..64).map(|i| if i < 32 { 0.0 } else { 1.0 }).collect();
        let t = otsu_threshold(&data).unwrap();
        assert!(t > 0.0 && t < 1.0);
        assert_eq!(binarize(&data), data);
    }

    #[test]
    fn constant_input_is_degenerate() {
        assert!(otsu_threshold(&[3.0f64; 10]).is_err());
        assert!(otsu_threshold::<f64>(&[]).is_err());
        assert_eq!(binarize(&[2.0f32; 4]), [0.0; 4]);
    }
}

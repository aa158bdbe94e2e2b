//! Convergence (SROD), quality (SNR) and ground-truth (shape error)
//! metrics, and the rule that turns a metric history into a stopping
//! recommendation.
//!
//! All norms and moments are accumulated in `f64`.

use alloc::vec::Vec;
#[allow(unused_imports)] // inherent when a dependency links std
use num_traits::Float as _;
use serde::{Deserialize, Serialize};

use crate::error::{degenerate, invalid, Error, Result};
use crate::recon::{binarize, OrthosliceSet};
use crate::volume::VoxelVolume;

/// Relative change of the orthoslice set caused by the newest projection:
/// `|O_N - O_{N-1}| / |O_N|` over all three slices.
pub fn srod(current: &OrthosliceSet, previous: &OrthosliceSet) -> Result<f64> {
    if current.specs != previous.specs {
        return Err(invalid!("SROD compares orthoslices with different placements"));
    }
    if previous.n_projections + 1 != current.n_projections {
        return Err(invalid!("SROD needs consecutive sets, got N = {} and N = {}", previous.n_projections, current.n_projections));
    }
    if current.pixel_count() != previous.pixel_count() {
        return Err(invalid!("orthoslice sets differ in size"));
    }
    let (mut diff, mut norm) = (0.0, 0.0);
    for (a, b) in current.pixels().zip(previous.pixels()) {
        diff += (a - b) * (a - b);
        norm += a * a;
    }
    if norm == 0.0 {
        return Err(degenerate!("orthoslice set at N = {} is all zero", current.n_projections));
    }
    Ok(diff.sqrt() / norm.sqrt())
}

/// `20 log10(mean / std)` over every pixel of the set, population std.
pub fn snr(current: &OrthosliceSet) -> Result<f64> {
    snr_of(current.pixels(), current.pixel_count())
}

fn snr_of(values: impl Iterator<Item = f64> + Clone, count: usize) -> Result<f64> {
    if count == 0 {
        return Err(degenerate!("SNR of an empty set"));
    }
    let mean = values.clone().sum::<f64>() / count as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / count as f64;
    let std = var.sqrt();
    if std == 0.0 {
        return Err(degenerate!("SNR undefined for a constant set"));
    }
    if !(mean > 0.0) {
        return Err(Error::UndefinedSnr(mean));
    }
    Ok(20.0 * (mean / std).log10())
}

/// `100 |B(ref) - B(rec)| / |B(ref)|` with `B` the Otsu binarization.
pub fn shape_error(v_ref: &VoxelVolume, v_rec: &VoxelVolume) -> Result<f64> {
    if v_ref.shape() != v_rec.shape() {
        return Err(invalid!("shape error between volumes of shape {:?} and {:?}", v_ref.shape(), v_rec.shape()));
    }
    let b_ref = binarize(v_ref.data());
    let b_rec = binarize(v_rec.data());
    let norm: f64 = b_ref.iter().map(|v| v * v).sum();
    if norm == 0.0 {
        return Err(degenerate!("binarized reference volume is empty"));
    }
    let diff: f64 = b_ref.iter().zip(&b_rec).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(100.0 * diff.sqrt() / norm.sqrt())
}

/// Parameters of the stopping rule. Missing fields take their defaults
/// when deserialized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StopRule {
    /// SROD below this counts as converged.
    pub srod_threshold: f64,
    /// SNR drop from the peak that counts as damage, in dB.
    pub snr_decline_db: f64,
    /// Consecutive projections the drop has to persist.
    pub decline_sustain: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        Self { srod_threshold: 0.1, snr_decline_db: 0.5, decline_sustain: 3 }
    }
}

/// Per-projection metric history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTrace {
    pub srod: Vec<(usize, f64)>,
    pub snr: Vec<(usize, f64)>,
    pub rule: StopRule,
    /// Projection counts at which the slice placement changed.
    pub restarts: Vec<usize>,
}

impl MetricTrace {
    pub fn new(rule: StopRule) -> Self {
        Self { srod: Vec::new(), snr: Vec::new(), rule, restarts: Vec::new() }
    }

    pub fn threshold(&self) -> f64 {
        self.rule.srod_threshold
    }

    pub fn last_restart(&self) -> usize {
        self.restarts.last().copied().unwrap_or(0)
    }

    /// Appends metrics for projection count `n`; `n` must increase.
    pub fn record(&mut self, n: usize, srod: Option<f64>, snr: Option<f64>) -> Result<()> {
        let last = self.srod.last().map(|e| e.0).max(self.snr.last().map(|e| e.0)).unwrap_or(0);
        if n <= last && (srod.is_some() || snr.is_some()) {
            return Err(invalid!("metric entry N = {n} does not follow N = {last}"));
        }
        if srod.is_some() && n <= self.last_restart() {
            return Err(invalid!("SROD at N = {n} would pair slices across the restart at {}", self.last_restart()));
        }
        if let Some(v) = srod {
            self.srod.push((n, v));
        }
        if let Some(v) = snr {
            self.snr.push((n, v));
        }
        Ok(())
    }

    /// Marks that the orthoslices at `n` use a new placement.
    pub fn mark_restart(&mut self, n: usize) {
        self.restarts.push(n);
    }

    pub fn srod_since_restart(&self) -> &[(usize, f64)] {
        let start = self.last_restart();
        let i = self.srod.partition_point(|e| e.0 < start);
        &self.srod[i..]
    }

    pub fn snr_since_restart(&self) -> &[(usize, f64)] {
        let start = self.last_restart();
        let i = self.snr.partition_point(|e| e.0 < start);
        &self.snr[i..]
    }

    /// Same history judged with another rule.
    pub fn with_rule(&self, rule: StopRule) -> Self {
        Self { rule, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRationale {
    Converged,
    DamageDetected,
    InsufficientData,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRecommendation {
    pub srod_converged_at: Option<usize>,
    pub snr_peak_at: Option<usize>,
    pub suggested_n: Option<usize>,
    pub rationale: StopRationale,
}

/// Applies the stopping rule to the history since the last restart.
///
/// * converged at the first N whose SROD is below the threshold;
/// * SNR peak at the argmax (earliest on ties);
/// * damage once every one of `decline_sustain` consecutive projections
///   after the peak sits at least `snr_decline_db` below it.
///
/// Damage wins over convergence and suggests the SNR peak.
pub fn stop_decision(trace: &MetricTrace) -> StopRecommendation {
    let rule = trace.rule;
    let srod = trace.srod_since_restart();
    let snr = trace.snr_since_restart();

    let peak = snr.iter().fold(None::<(usize, f64)>, |best, &(n, v)| match best {
        Some((_, b)) if v <= b => best,
        _ => Some((n, v)),
    });
    if srod.len() < 2 {
        return StopRecommendation {
            srod_converged_at: None,
            snr_peak_at: peak.map(|p| p.0),
            suggested_n: None,
            rationale: StopRationale::InsufficientData,
        };
    }
    let converged = srod.iter().find(|e| e.1 < rule.srod_threshold).map(|e| e.0);

    let damage = peak.is_some_and(|(peak_n, peak_v)| {
        let mut run = 0;
        snr.iter().filter(|e| e.0 > peak_n).any(|&(_, v)| {
            run = if v <= peak_v - rule.snr_decline_db { run + 1 } else { 0 };
            run >= rule.decline_sustain.max(1)
        })
    });

    let (suggested_n, rationale) = if damage {
        (peak.map(|p| p.0), StopRationale::DamageDetected)
    } else if converged.is_some() {
        (converged, StopRationale::Converged)
    } else {
        (None, StopRationale::InsufficientData)
    };
    StopRecommendation { srod_converged_at: converged, snr_peak_at: peak.map(|p| p.0), suggested_n, rationale }
}

/// Centred moving average with the window clipped at the ends.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use crate::recon::SliceSpec;
    use alloc::vec;

    fn set_from(values: [&[f64]; 3], n: usize) -> OrthosliceSet {
        let slices = values.map(|v| Image::from_vec(1, v.len(), v.to_vec()));
        OrthosliceSet { slices, specs: SliceSpec::default_set(), n_projections: n, restarted: false }
    }

    #[test]
    fn srod_identical_and_from_zero() {
        let a = set_from([&[1.0, 2.0], &[3.0], &[0.5, 0.5]], 4);
        let mut b = a.clone();
        b.n_projections = 3;
        assert_eq!(srod(&a, &b).unwrap(), 0.0);
        let zero = set_from([&[0.0, 0.0], &[0.0], &[0.0, 0.0]], 3);
        assert_eq!(srod(&a, &zero).unwrap(), 1.0);
        assert!(srod(&zero_at(4), &zero).is_err());
    }

    fn zero_at(n: usize) -> OrthosliceSet {
        set_from([&[0.0, 0.0], &[0.0], &[0.0, 0.0]], n)
    }

    #[test]
    fn srod_rejects_mismatched_sets() {
        let a = set_from([&[1.0], &[1.0], &[1.0]], 5);
        let b = set_from([&[1.0], &[1.0], &[1.0]], 3);
        assert!(matches!(srod(&a, &b), Err(Error::InvalidArgument(_))));
        let mut c = set_from([&[1.0], &[1.0], &[1.0]], 4);
        c.specs = SliceSpec::rotated_set(45.0);
        assert!(matches!(srod(&a, &c), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn snr_ratio_cases() {
        // values {0, 2}: mean 1, std 1
        assert!(snr(&set_from([&[0.0, 2.0], &[0.0, 2.0], &[0.0, 2.0]], 1)).unwrap().abs() < 1e-12);
        // values {9, 11}: mean 10, std 1
        let v = snr(&set_from([&[9.0, 11.0], &[9.0, 11.0], &[11.0, 9.0]], 1)).unwrap();
        assert!((v - 20.0).abs() < 1e-12);
        assert!(matches!(snr(&set_from([&[1.0], &[1.0], &[1.0]], 1)), Err(Error::DegenerateInput(_))));
        assert!(matches!(snr(&set_from([&[-1.0, 0.0], &[-1.0], &[0.0]], 1)), Err(Error::UndefinedSnr(_))));
    }

    #[test]
    fn shape_error_basic_cases() {
        let v = VoxelVolume::from_fn([6, 6, 6], |x, _, _| if x < 3 { 1.0 } else { 0.0 });
        assert_eq!(shape_error(&v, &v).unwrap(), 0.0);
        assert_eq!(shape_error(&v, &VoxelVolume::zeros([6, 6, 6])).unwrap(), 100.0);
        assert!(shape_error(&v, &VoxelVolume::zeros([6, 6, 5])).is_err());
        assert!(matches!(shape_error(&VoxelVolume::zeros([6, 6, 6]), &v), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn record_enforces_order_and_restart_boundary() {
        let mut t = MetricTrace::new(StopRule::default());
        t.record(1, None, Some(1.0)).unwrap();
        t.record(2, Some(0.5), Some(1.1)).unwrap();
        assert!(t.record(2, Some(0.4), None).is_err());
        t.mark_restart(3);
        assert!(t.record(3, Some(0.3), Some(1.0)).is_err());
        t.record(3, None, Some(1.0)).unwrap();
        t.record(4, Some(0.2), Some(1.0)).unwrap();
        assert_eq!(t.srod_since_restart(), &[(4, 0.2)]);
    }

    fn trace_from(srod: &[(usize, f64)], snr: &[(usize, f64)]) -> MetricTrace {
        let mut t = MetricTrace::new(StopRule::default());
        t.srod = srod.to_vec();
        t.snr = snr.to_vec();
        t
    }

    #[test]
    fn converges_at_first_crossing() {
        let t = trace_from(&[(2, 0.5), (3, 0.3), (4, 0.09), (5, 0.08)], &[(1, -20.0), (2, -19.0), (3, -18.0), (4, -17.5), (5, -17.0)]);
        let r = stop_decision(&t);
        assert_eq!(r.srod_converged_at, Some(4));
        assert_eq!(r.suggested_n, Some(4));
        assert_eq!(r.rationale, StopRationale::Converged);
        assert_eq!(r.snr_peak_at, Some(5));
    }

    #[test]
    fn damage_detected_after_sustained_decline() {
        let srod: Vec<(usize, f64)> = (2..=21).map(|n| (n, 0.5)).collect();
        let mut snr: Vec<(usize, f64)> = (1..=16).map(|n| (n, -20.0 + 0.4 * n as f64)).collect();
        let peak = snr.last().unwrap().1;
        snr.extend((17..=21).map(|n| (n, peak - 0.2 * (n - 16) as f64)));
        let r = stop_decision(&trace_from(&srod, &snr));
        assert_eq!(r.suggested_n, Some(16));
        assert_eq!(r.snr_peak_at, Some(16));
        assert_eq!(r.rationale, StopRationale::DamageDetected);
        assert_eq!(r.srod_converged_at, None);
    }

    #[test]
    fn short_decline_is_not_damage() {
        let srod: Vec<(usize, f64)> = (2..=10).map(|n| (n, 0.5)).collect();
        let mut snr: Vec<(usize, f64)> = (1..=8).map(|n| (n, n as f64)).collect();
        snr.extend([(9, 7.0), (10, 6.0)]);
        let r = stop_decision(&trace_from(&srod, &snr));
        assert_eq!(r.rationale, StopRationale::InsufficientData);
        assert_eq!(r.suggested_n, None);
    }

    #[test]
    fn rising_snr_without_convergence_is_insufficient() {
        let srod: Vec<(usize, f64)> = (2..=10).map(|n| (n, 0.3)).collect();
        let snr: Vec<(usize, f64)> = (1..=10).map(|n| (n, n as f64)).collect();
        let r = stop_decision(&trace_from(&srod, &snr));
        assert_eq!(r.suggested_n, None);
        assert_eq!(r.rationale, StopRationale::InsufficientData);
    }

    #[test]
    fn peak_ties_resolve_to_smallest_n() {
        let srod = [(2, 0.5), (3, 0.5)];
        let snr = [(1, 1.0), (2, 3.0), (3, 3.0)];
        assert_eq!(stop_decision(&trace_from(&srod, &snr)).snr_peak_at, Some(2));
    }

    #[test]
    fn decision_ignores_history_before_restart() {
        let mut t = trace_from(&[(2, 0.05), (3, 0.04)], &[(1, 0.0), (2, 1.0), (3, 2.0)]);
        t.mark_restart(4);
        t.snr.push((4, 0.5));
        t.srod.push((5, 0.5));
        t.snr.push((5, 0.6));
        let r = stop_decision(&t);
        assert_eq!(r.rationale, StopRationale::InsufficientData);
        assert_eq!(r.srod_converged_at, None);
    }

    #[test]
    fn moving_average_window_three() {
        assert_eq!(moving_average(&[3.0, 0.0, 3.0, 6.0], 3), vec![1.5, 2.0, 3.0, 4.5]);
    }
}

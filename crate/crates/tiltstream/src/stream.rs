//! The consumer pipeline shared by live sessions and offline replays:
//! align, update orthoslices, measure, decide.

use serde::{Deserialize, Serialize};
use tiltstream_core::align::{AlignOptions, AlignmentResult, OnlineAligner};
use tiltstream_core::metrics::{snr, srod, stop_decision, MetricTrace, StopRecommendation, StopRule};
use tiltstream_core::projector::Projection;
use tiltstream_core::recon::{OrthosliceSet, SliceSpec, StreamingReconstructor};

use crate::error::Result;
use crate::wire::ControlCommand;

/// Result of ingesting one projection.
#[derive(Debug, Clone)]
pub struct Step {
    pub n: usize,
    /// Applied `(dy, dx)` and the 1-based reference image, when aligning.
    pub shift: Option<(f64, f64)>,
    pub reference_index: Option<usize>,
    pub set: OrthosliceSet,
    pub srod: Option<f64>,
    pub srod_error: Option<String>,
    pub snr: Option<f64>,
    pub snr_error: Option<String>,
    pub recommendation: StopRecommendation,
    /// The recommendation names a new `suggested_n`.
    pub new_suggestion: bool,
}

#[derive(Debug, Clone)]
pub struct StreamProcessor {
    aligner: Option<OnlineAligner>,
    recon: StreamingReconstructor,
    trace: MetricTrace,
    previous: Option<OrthosliceSet>,
    last_suggested: Option<usize>,
}

impl StreamProcessor {
    pub fn new(detector_shape: (usize, usize), specs: [SliceSpec; 3], align: Option<AlignOptions>, rule: StopRule) -> Result<Self> {
        Ok(Self {
            aligner: align.map(OnlineAligner::new),
            recon: StreamingReconstructor::new(detector_shape, specs)?,
            trace: MetricTrace::new(rule),
            previous: None,
            last_suggested: None,
        })
    }

    pub fn n(&self) -> usize {
        self.recon.n_projections()
    }

    pub fn trace(&self) -> &MetricTrace {
        &self.trace
    }

    pub fn alignment(&self) -> Option<&AlignmentResult> {
        self.aligner.as_ref().map(|a| a.result())
    }

    pub fn latest(&self) -> Option<&OrthosliceSet> {
        self.previous.as_ref()
    }

    pub fn recommendation(&self) -> StopRecommendation {
        stop_decision(&self.trace)
    }

    /// Schedules new slice placements from the next projection on.
    pub fn reorient(&mut self, specs: [SliceSpec; 3]) -> Result<bool> {
        Ok(self.recon.reorient(specs)?)
    }

    pub fn push(&mut self, projection: &Projection) -> Result<Step> {
        let (pixels, shift, reference_index) = match &mut self.aligner {
            Some(aligner) => {
                let aligned = aligner.push(&projection.pixels, projection.angle_deg).clone();
                let r = aligner.result();
                (aligned, r.shifts.last().copied(), r.reference_map.last().copied().flatten())
            }
            None => (projection.pixels.clone(), None, None),
        };
        let set = self.recon.push(&pixels, projection.angle_deg)?;
        let n = set.n_projections;
        if set.restarted {
            self.trace.mark_restart(n);
        }
        let (srod_value, srod_error) = match (&self.previous, set.restarted) {
            (Some(prev), false) => match srod(&set, prev) {
                Ok(v) => (Some(v), None),
                Err(e) => (None, Some(e.to_string())),
            },
            _ => (None, None),
        };
        let (snr_value, snr_error) = match snr(&set) {
            Ok(v) => (Some(v), None),
            Err(e) => (None, Some(e.to_string())),
        };
        self.trace.record(n, srod_value, snr_value)?;
        let recommendation = stop_decision(&self.trace);
        let new_suggestion = recommendation.suggested_n.is_some() && recommendation.suggested_n != self.last_suggested;
        if recommendation.suggested_n.is_some() {
            self.last_suggested = recommendation.suggested_n;
        }
        self.previous = Some(set.clone());
        Ok(Step { n, shift, reference_index, set, srod: srod_value, srod_error, snr: snr_value, snr_error, recommendation, new_suggestion })
    }
}

/// A control command applied after `after` projections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledCommand {
    pub after: usize,
    #[serde(flatten)]
    pub command: ControlCommand,
}

/// Ordered control commands, as recorded by a session (`controls.json`)
/// or written by hand for scripted runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ControlScript(pub Vec<ScheduledCommand>);

impl ControlScript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn at(mut self, after: usize, command: ControlCommand) -> Self {
        self.0.push(ScheduledCommand { after, command });
        self
    }

    /// Commands due after exactly `n` projections, in script order.
    pub fn due(&self, n: usize) -> impl Iterator<Item = &ControlCommand> {
        self.0.iter().filter(move |c| c.after == n).map(|c| &c.command)
    }

    pub fn push(&mut self, after: usize, command: ControlCommand) {
        self.0.push(ScheduledCommand { after, command });
    }
}

/// `reorient` carries a list; the pipeline needs exactly three slices.
pub fn reorient_specs(slices: &[SliceSpec]) -> std::result::Result<[SliceSpec; 3], String> {
    slices.try_into().map_err(|_| format!("reorient needs exactly 3 slices, got {}", slices.len()))
}

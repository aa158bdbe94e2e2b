//! Offline replay of a recorded tilt series through the streaming pipeline.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use tiltstream_core::align::{AlignOptions, AlignmentResult};
use tiltstream_core::metrics::{shape_error, MetricTrace, StopRecommendation, StopRule};
use tiltstream_core::projector::TiltSeries;
use tiltstream_core::recon::{em_reconstruct, OrthosliceSet, SliceSpec};
use tiltstream_core::VoxelVolume;

use crate::config::SessionConfig;
use crate::error::Result;
use crate::io;
use crate::session::{CONFIG_FILE, CONTROLS_FILE, REFERENCE_FILE, SERIES_DIR};
use crate::stream::{reorient_specs, ControlScript, StreamProcessor};
use crate::wire::ControlCommand;

#[derive(Debug, Clone)]
pub struct AnalyzeOptions {
    pub slices: [SliceSpec; 3],
    pub align: Option<AlignOptions>,
    pub rule: StopRule,
    /// Recorded or scripted commands; `continue` has no effect offline.
    pub controls: ControlScript,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self { slices: SliceSpec::default_set(), align: None, rule: StopRule::default(), controls: ControlScript::new() }
    }
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub trace: MetricTrace,
    pub recommendation: StopRecommendation,
    /// Projections consumed before the series ran out or a `stop` applied.
    pub n_processed: usize,
    pub alignment: Option<AlignmentResult>,
    pub final_set: Option<OrthosliceSet>,
}

/// Feeds `series` one projection at a time, exactly like a live session.
pub fn analyze(series: &TiltSeries, options: &AnalyzeOptions) -> Result<Analysis> {
    let mut processor = StreamProcessor::new(series.detector_shape, options.slices, options.align, options.rule)?;
    'outer: for p in &series.projections {
        for command in options.controls.due(processor.n()) {
            match command {
                ControlCommand::Stop => break 'outer,
                ControlCommand::Continue => {}
                ControlCommand::Reorient { slices } => {
                    // invalid entries were never applied live either
                    if let Ok(specs) = reorient_specs(slices) {
                        let _ = processor.reorient(specs);
                    }
                }
            }
        }
        processor.push(p)?;
    }
    Ok(Analysis {
        trace: processor.trace().clone(),
        recommendation: processor.recommendation(),
        n_processed: processor.n(),
        alignment: processor.alignment().cloned(),
        final_set: processor.latest().cloned(),
    })
}

/// What a session directory holds for a replay.
#[derive(Debug, Clone)]
pub struct RecordedSession {
    pub dir: PathBuf,
    pub config: SessionConfig,
    pub series: TiltSeries,
    pub controls: ControlScript,
}

impl RecordedSession {
    pub fn load(dir: &Path) -> Result<Self> {
        let config = SessionConfig::load(&dir.join(CONFIG_FILE))?;
        let series = io::load_tilt_series(&dir.join(SERIES_DIR))?;
        let controls_path = dir.join(CONTROLS_FILE);
        let controls = if controls_path.exists() { io::read_json(&controls_path)? } else { ControlScript::new() };
        Ok(Self { dir: dir.to_path_buf(), config, series, controls })
    }

    /// Options reproducing the live run.
    pub fn options(&self) -> Result<AnalyzeOptions> {
        Ok(AnalyzeOptions {
            slices: self.config.slice_specs()?,
            align: self.config.align.options(),
            rule: self.config.stop_rule,
            controls: self.controls.clone(),
        })
    }

    pub fn reference(&self) -> Result<Option<VoxelVolume>> {
        let path = self.dir.join(REFERENCE_FILE);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(io::load_volume(&path)?.0))
    }
}

/// Plain-text table of the trace, one row per N.
pub fn report_table(trace: &MetricTrace, n_total: usize, shape_errors: &[(usize, f64)]) -> String {
    let srod = trace.srod_since_restart();
    let snr = trace.snr_since_restart();
    let mut out = String::from("     N        SROD    SNR (dB)\n");
    for n in 1..=n_total {
        let cell = |vals: &[(usize, f64)]| vals.iter().find(|(k, _)| *k == n).map_or("-".to_string(), |(_, v)| format!("{v:.4}"));
        let _ = writeln!(out, "{n:>6} {:>11} {:>11}", cell(srod), cell(snr));
    }
    let rec = tiltstream_core::metrics::stop_decision(trace);
    let show = |v: Option<usize>| v.map_or("-".to_string(), |n| n.to_string());
    let _ = writeln!(
        out,
        "\nconverged at {}, snr peak at {}, suggested N {} ({:?})",
        show(rec.srod_converged_at),
        show(rec.snr_peak_at),
        show(rec.suggested_n),
        rec.rationale
    );
    if !shape_errors.is_empty() {
        out.push_str("\n     N  shape error (%)\n");
        for (n, e) in shape_errors {
            let _ = writeln!(out, "{n:>6} {e:>16.3}");
        }
    }
    out
}

/// EM reconstruction from the first `n` projections, with its shape error
/// when a reference is known.
pub fn reconstruct(
    series: &TiltSeries,
    n: usize,
    iterations: usize,
    reference: Option<&VoxelVolume>,
) -> Result<(VoxelVolume, Option<f64>)> {
    let v = em_reconstruct(series, n, iterations)?;
    let e = reference.map(|r| shape_error(r, &v)).transpose()?;
    Ok((v, e))
}

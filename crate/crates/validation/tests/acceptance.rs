//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any failed. Pass criterion ids (`A5 A11`) to run a subset.

use std::collections::HashMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use tiltstream::analyze::{analyze, AnalyzeOptions, RecordedSession};
use tiltstream::config::{DamageConfig, PhantomConfig, SessionConfig};
use tiltstream::io;
use tiltstream::session::{Session, EM_FILE, REFERENCE_FILE, SERIES_DIR, SLICES_DIR, TRACE_FILE};
use tiltstream::stream::ControlScript;
use tiltstream::wire::ControlCommand;
use tiltstream_core::align::{align_series, shift_image, AlignMode, AlignOptions};
use tiltstream_core::damage::{uniform_times, DamageParams};
use tiltstream_core::geometry::{angular_coverage, grs_angle, grs_angles, is_angles};
use tiltstream_core::metrics::{moving_average, shape_error, snr, srod, StopRule};
use tiltstream_core::phantom::{nanocage, shepp_logan_3d, NanocageSpec};
use tiltstream_core::projector::{simulate_acquisition, Projection, TiltSeries};
use tiltstream_core::recon::{em_reconstruct, fbp_slice, OrthosliceSet, SliceSpec, StreamingReconstructor};
use tiltstream_core::{Image, VoxelVolume};

const SIZE: usize = 64;
const GRS_N: usize = 71;
const RANGE: f64 = 140.0;
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const EM_ITERATIONS: usize = 30;

const ANGLE_TOL: f64 = 0.05;
const SEPARATION_TOL: f64 = 0.1;
const COVERAGE_TOL: f64 = 0.1;
const STREAMING_REL_TOL: f64 = 1e-5;
const DISJOINT_TOL: f64 = 0.1;
/// Shape error of EM on the undamaged nanocage, IS 2 deg, 30 iterations,
/// measured once with this implementation.
const A9_BASELINE: f64 = 13.95;
const A9_TARGET: f64 = 15.0;
const A9_MARGIN: f64 = 2.0;
const MAX_INJECTED_SHIFT: i64 = 5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn median<T: Copy + PartialOrd>(values: &[T]) -> T {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("comparable"));
    v[v.len() / 2]
}

/// Simulated 64^3 nanocage acquisitions, shared between criteria.
#[derive(Default)]
struct Cache {
    phantom: Option<VoxelVolume>,
    series: HashMap<(&'static str, u64), TiltSeries>,
}

impl Cache {
    fn phantom(&mut self) -> VoxelVolume {
        self.phantom.get_or_insert_with(|| nanocage(NanocageSpec::default_for(SIZE)).unwrap()).clone()
    }

    fn grs(&mut self, preset: &'static str, seed: u64) -> &TiltSeries {
        let v = self.phantom();
        self.series.entry((preset, seed)).or_insert_with(|| {
            let params = DamageParams::preset(preset, SIZE, seed).unwrap();
            simulate_acquisition(&v, &grs_angles(GRS_N, RANGE).unwrap(), &params, &uniform_times(GRS_N)).unwrap()
        })
    }
}

/// Streaming metrics without alignment, see the ledger note on drift.
fn unaligned() -> AnalyzeOptions {
    AnalyzeOptions { slices: SliceSpec::default_set(), align: None, rule: StopRule::default(), controls: ControlScript::new() }
}

fn a1(_: &mut Cache) -> Outcome {
    let (t2, t3) = (grs_angle(2, RANGE), grs_angle(3, RANGE));
    let sep = (t3 - t2).abs();
    let pass = (t2 + 37.0).abs() <= ANGLE_TOL && (t3 - 49.6).abs() <= ANGLE_TOL && (sep - 86.5).abs() <= SEPARATION_TOL;
    outcome(pass, format!("theta2 {t2:.3}, theta3 {t3:.3}, separation {sep:.3}"))
}

fn a2(_: &mut Cache) -> Outcome {
    let scheme = grs_angles(GRS_N, RANGE).unwrap();
    let got: Vec<f64> = [10, 20, 30].iter().map(|&n| angular_coverage(&scheme, n).unwrap()).collect();
    let want = [119.6, 127.4, 132.2];
    let pass = got.iter().zip(want).all(|(g, w)| (g - w).abs() <= COVERAGE_TOL);
    outcome(pass, format!("coverage {:.2} / {:.2} / {:.2}", got[0], got[1], got[2]))
}

fn a3(_: &mut Cache) -> Outcome {
    let steps = [2.0, 5.0, 7.0, 10.0, 14.0, 35.0, 70.0];
    let got: Vec<usize> = steps.iter().map(|&s| is_angles(s, RANGE).unwrap().len()).collect();
    outcome(got == [71, 29, 21, 15, 11, 5, 3], format!("counts {got:?}"))
}

fn slice_set(values: [Vec<f64>; 3], side: usize, n: usize) -> OrthosliceSet {
    OrthosliceSet {
        slices: values.map(|v| Image::from_vec(side, side, v)),
        specs: SliceSpec::default_set(),
        n_projections: n,
        restarted: false,
    }
}

fn a4(_: &mut Cache) -> Outcome {
    let side = 8;
    let ramp = || (0..side * side).map(|k| 1.0 + k as f64).collect::<Vec<_>>();
    let o = slice_set([ramp(), ramp(), ramp()], side, 2);
    let same = srod(&o, &slice_set([ramp(), ramp(), ramp()], side, 1)).unwrap();
    let zero = slice_set([vec![0.0; 64], vec![0.0; 64], vec![0.0; 64]], side, 1);
    let from_zero = srod(&o, &zero).unwrap();
    // mean 10, population std 1
    let alt = || (0..side * side).map(|k| if k % 2 == 0 { 9.0 } else { 11.0 }).collect::<Vec<_>>();
    let s = snr(&slice_set([alt(), alt(), alt()], side, 1)).unwrap();
    let half = |upper: bool| VoxelVolume::from_fn([16, 16, 16], |x, _, _| if (x >= 8) == upper { 1.0 } else { 0.0 });
    let es = shape_error(&half(false), &half(true)).unwrap();
    let pass = same == 0.0 && from_zero == 1.0 && (s - 20.0).abs() < 1e-12 && (es - 200f64.sqrt() * 10.0).abs() <= DISJOINT_TOL;
    outcome(pass, format!("srod(O,O) {same}, srod(O,0) {from_zero}, snr {s:.12} dB, disjoint Es {es:.3}%"))
}

fn a5(_: &mut Cache) -> Outcome {
    let v = shepp_logan_3d(SIZE).unwrap();
    let scheme = grs_angles(GRS_N, RANGE).unwrap();
    let series = simulate_acquisition(&v, &scheme, &DamageParams::none(), &uniform_times(GRS_N)).unwrap();
    let specs = SliceSpec::default_set();
    let mut rec = StreamingReconstructor::new(series.detector_shape, specs).unwrap();
    let mut worst: f64 = 0.0;
    for (k, p) in series.projections.iter().enumerate() {
        let set = rec.push(&p.pixels, p.angle_deg).unwrap();
        for (slice, spec) in set.slices.iter().zip(&specs) {
            let batch = fbp_slice(&series, k + 1, spec).unwrap();
            let scale = batch.data().iter().fold(0.0f64, |m, b| m.max(b.abs()));
            let err = slice.data().iter().zip(batch.data()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            worst = worst.max(if scale > 0.0 { err / scale } else { err });
        }
    }
    outcome(worst <= STREAMING_REL_TOL, format!("max relative deviation {worst:.2e} over N = 1..{GRS_N}"))
}

/// Steps where the window-3 smoothed SROD rises, counted for N > 5.
fn smoothed_increases(srod: &[(usize, f64)]) -> usize {
    let smooth = moving_average(&srod.iter().map(|p| p.1).collect::<Vec<_>>(), 3);
    let ns: Vec<usize> = srod.iter().map(|p| p.0).collect();
    (1..smooth.len()).filter(|&i| ns[i - 1] >= 5 && smooth[i] > smooth[i - 1]).count()
}

fn a6(cache: &mut Cache) -> Outcome {
    let mut converged = Vec::new();
    let mut increases = Vec::new();
    let mut peaks = Vec::new();
    for seed in SEEDS {
        let a = analyze(cache.grs("NC-1", seed), &unaligned()).unwrap();
        converged.push(a.recommendation.srod_converged_at.unwrap_or(usize::MAX));
        increases.push(smoothed_increases(a.trace.srod_since_restart()));
        peaks.push(a.recommendation.snr_peak_at.unwrap_or(0));
    }
    let (c, i, p) = (median(&converged), median(&increases), median(&peaks));
    let parts = [c < GRS_N, i == 0, p > GRS_N - 10];
    let show = |b: bool| if b { "ok" } else { "fails" };
    outcome(
        parts.iter().all(|&b| b),
        format!(
            "median SROD < 0.1 at N = {c} ({}), smoothed SROD rises {i} times after N = 5 ({}), SNR peak at N = {p} ({})",
            show(parts[0]),
            show(parts[1]),
            show(parts[2])
        ),
    )
}

fn a7(cache: &mut Cache) -> Outcome {
    let mut medians = Vec::new();
    for preset in ["NC-1", "NC-2", "NC-3", "NC-4"] {
        let peaks: Vec<usize> =
            SEEDS.iter().map(|&s| analyze(cache.grs(preset, s), &unaligned()).unwrap().recommendation.snr_peak_at.unwrap_or(0)).collect();
        medians.push(median(&peaks));
    }
    let pass = medians.windows(2).all(|w| w[1] <= w[0]);
    outcome(pass, format!("median SNR peak NC-1..NC-4: {medians:?}"))
}

fn a8(cache: &mut Cache) -> Outcome {
    let phantom = cache.phantom();
    let mut pass = true;
    let mut detail = Vec::new();
    for preset in ["NC-3", "NC-4"] {
        let (mut at_suggested, mut at_full, mut ns) = (Vec::new(), Vec::new(), Vec::new());
        for seed in SEEDS {
            let series = cache.grs(preset, seed).clone();
            let n = analyze(&series, &unaligned()).unwrap().recommendation.suggested_n.unwrap_or(GRS_N);
            let es = |n| shape_error(&phantom, &em_reconstruct(&series, n, EM_ITERATIONS).unwrap()).unwrap();
            at_suggested.push(es(n));
            at_full.push(es(GRS_N));
            ns.push(n);
        }
        let (s, f) = (median(&at_suggested), median(&at_full));
        pass &= s < f;
        detail.push(format!("{preset} Es {s:.2}% at suggested N (median {}) vs {f:.2}% at {GRS_N}", median(&ns)));
    }
    outcome(pass, detail.join("; "))
}

fn a9(cache: &mut Cache) -> Outcome {
    let phantom = cache.phantom();
    let scheme = is_angles(2.0, RANGE).unwrap();
    let series = simulate_acquisition(&phantom, &scheme, &DamageParams::none(), &uniform_times(scheme.len())).unwrap();
    let es = shape_error(&phantom, &em_reconstruct(&series, scheme.len(), EM_ITERATIONS).unwrap()).unwrap();
    // both bounds apply; which one binds depends on the recorded baseline
    #[allow(clippy::redundant_comparisons)]
    let pass = es < A9_TARGET && es <= A9_BASELINE + A9_MARGIN;
    outcome(pass, format!("Es {es:.2}% on {} IS projections (baseline {A9_BASELINE}%)", scheme.len()))
}

fn a10(cache: &mut Cache) -> Outcome {
    let series = cache.grs("NC-1", SEEDS[0]).clone();
    // deterministic pseudo-random integers in [-5, 5]
    let mut state = 0x9e37_79b9_7f4a_7c15u64;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 33) % (2 * MAX_INJECTED_SHIFT as u64 + 1)) as i64 - MAX_INJECTED_SHIFT
    };
    let injected: Vec<(f64, f64)> = (0..series.len()).map(|_| (next() as f64, next() as f64)).collect();
    let mut shifted = series.clone();
    for (p, &(dy, dx)) in shifted.projections.iter_mut().zip(&injected) {
        *p = Projection { pixels: shift_image(&p.pixels, dy, dx), ..p.clone() };
    }
    let mut pass = true;
    let mut detail = Vec::new();
    for mode in [AlignMode::Chronological, AlignMode::NearestAngle] {
        let (result, _) = align_series(&shifted, AlignOptions::new(mode));
        // the first image is never moved, so everything lands on its offset
        let wrong = result
            .shifts
            .iter()
            .zip(&injected)
            .filter(|(&(dy, dx), &(iy, ix))| dy != injected[0].0 - iy || dx != injected[0].1 - ix)
            .count();
        pass &= wrong == 0;
        detail.push(format!("{mode:?}: {wrong} of {} shifts wrong", series.len()));
        if mode == AlignMode::NearestAngle {
            let angles = series.angles();
            let scheme = &series.scheme;
            let mut worst_excess = f64::NEG_INFINITY;
            for (k, r) in result.reference_map.iter().enumerate().skip(3) {
                let gap = (angles[k] - angles[r.expect("reference") - 1]).abs();
                worst_excess = worst_excess.max(gap - scheme.nearest_neighbor_bound(k));
            }
            pass &= worst_excess <= 0.0;
            detail.push(format!("largest gap minus bound {worst_excess:.3} deg"));
        }
    }
    outcome(pass, detail.join(", "))
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn a11(_: &mut Cache) -> Outcome {
    let dir = tempfile::TempDir::new().unwrap();
    let config = SessionConfig {
        seed: 7,
        output_dir: Some(dir.path().join("session")),
        phantom: PhantomConfig::Nanocage { size: SIZE, outer_radius: None, wall_thickness: None, opening_radius: None },
        damage: DamageConfig::preset("NC-3"),
        ..SessionConfig::default()
    };
    let script = ControlScript::new().at(30, ControlCommand::Reorient { slices: SliceSpec::rotated_set(45.0).to_vec() });
    let live = Session::new(config.clone()).unwrap().with_script(script).run().unwrap();
    let out = &live.output_dir;

    let recorded = RecordedSession::load(out).unwrap();
    let replay = analyze(&recorded.series, &recorded.options().unwrap()).unwrap();
    let live_csv = std::fs::read(out.join(TRACE_FILE)).unwrap();
    let replay_identical = replay.trace == live.trace && io::trace_csv(&replay.trace, replay.n_processed).into_bytes() == live_csv;

    let series_exact = recorded.series.projections.len() == live.series.projections.len()
        && recorded.series.projections.iter().zip(&live.series.projections).all(|(a, b)| {
            bits(a.pixels.data()) == bits(b.pixels.data())
                && a.angle_deg.to_bits() == b.angle_deg.to_bits()
                && a.time.to_bits() == b.time.to_bits()
        });
    let (reference, _) = io::load_volume(&out.join(REFERENCE_FILE)).unwrap();
    let reference_exact = bits(reference.data()) == bits(config.phantom.build().unwrap().data());
    let (em, _) = io::load_volume(&out.join(EM_FILE)).unwrap();
    let em_exact = bits(em.data()) == bits(live.reconstruction.as_ref().unwrap().data());
    let reloaded = io::load_tilt_series(&out.join(SERIES_DIR)).unwrap();
    let series_dir_exact = reloaded == live.series;
    // the replayed final slices, written again, match the live files
    let again = io::save_orthoslices(&dir.path().join("again"), replay.final_set.as_ref().unwrap()).unwrap();
    let slices_exact = again.iter().all(|p| {
        let live_file = out.join(SLICES_DIR).join(p.file_name().unwrap());
        std::fs::read(p).unwrap() == std::fs::read(live_file).unwrap()
    });
    let manifest_ok = io::verify_manifest(out).is_ok();
    let pass = replay_identical && series_exact && series_dir_exact && reference_exact && em_exact && slices_exact && manifest_ok;
    outcome(
        pass,
        format!(
            "replay trace identical {replay_identical}, series {series_exact}/{series_dir_exact}, reference {reference_exact}, em {em_exact}, slices {slices_exact}, manifest {manifest_ok}"
        ),
    )
}

type Check = fn(&mut Cache) -> Outcome;

fn main() -> ExitCode {
    let criteria: [(&str, &str, Duration, Check); 11] = [
        ("A1", "GRS golden angles", Duration::from_secs(1), a1),
        ("A2", "GRS coverage", Duration::from_secs(1), a2),
        ("A3", "IS census", Duration::from_secs(1), a3),
        ("A4", "metric formulas", Duration::from_secs(1), a4),
        ("A5", "streaming equals batch", Duration::from_secs(120), a5),
        ("A6", "undamaged convergence", Duration::from_secs(600), a6),
        ("A7", "damage ordering", Duration::from_secs(2400), a7),
        ("A8", "early stop beats full series", Duration::from_secs(1800), a8),
        ("A9", "EM baseline", Duration::from_secs(300), a9),
        ("A10", "alignment recovery", Duration::from_secs(120), a10),
        ("A11", "determinism and replay", Duration::from_secs(120), a11),
    ];
    // ignore libtest-style flags cargo may forward
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut cache = Cache::default();
    let mut failed = Vec::new();
    for (id, name, budget, check) in criteria {
        if !wanted.is_empty() && !wanted.iter().any(|w| w.eq_ignore_ascii_case(id)) {
            continue;
        }
        let start = Instant::now();
        let o = check(&mut cache);
        let took = start.elapsed();
        let pass = o.pass && took <= budget;
        if !pass {
            failed.push(id);
        }
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("{id:<4} {verdict}  {name}: {} [{:.2}s, budget {}s]", o.detail, took.as_secs_f64(), budget.as_secs());
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(" "));
        ExitCode::FAILURE
    }
}

//! On-disk formats: raw little-endian `f32` arrays with JSON sidecars,
//! tilt-series directories, CSV tables and the hashed manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tiltstream_core::align::AlignmentResult;
use tiltstream_core::geometry::TiltScheme;
use tiltstream_core::metrics::{MetricTrace, StopRule};
use tiltstream_core::projector::{Projection, TiltSeries};
use tiltstream_core::recon::{OrthosliceSet, Plane};
use tiltstream_core::{Image, VoxelVolume};

use crate::error::{Error, IoContext, Result};

pub const DTYPE: &str = "float32";
pub const VOLUME_ORDER: &str = "x-fastest";
pub const IMAGE_ORDER: &str = "row-major";
pub const SERIES_FILE: &str = "series.json";
pub const MANIFEST_FILE: &str = "manifest.json";

fn encode(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    values.into_iter().flat_map(f32::to_le_bytes).collect()
}

/// Reads exactly `count` little-endian floats.
fn read_f32s(path: &Path, count: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).at(path)?;
    let expected = 4 * count as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch { path: path.to_path_buf(), expected, actual: bytes.len() as u64 });
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).at(dir)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).at(path)
}

/// Parses JSON, reporting the offending field when serde names one.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).at(path)?;
    serde_json::from_str(&text).map_err(|e| {
        let msg = e.to_string();
        let field = msg.split('`').nth(1).unwrap_or("document").to_string();
        Error::parse(path, field, msg)
    })
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Sidecar of a raw volume file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeMeta {
    /// `[nx, ny, nz]`
    pub shape: [usize; 3],
    pub voxel_size: f64,
    pub dtype: String,
    pub order: String,
    /// Free-form provenance such as `n_used` or `em_iterations`.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// Writes `path` (raw data) and `path` with a `.json` extension.
pub fn save_volume(path: &Path, v: &VoxelVolume, extra: BTreeMap<String, serde_json::Value>) -> Result<()> {
    if let Some(dir) = path.parent() {
        ensure_dir(dir)?;
    }
    fs::write(path, encode(v.data().iter().copied())).at(path)?;
    let meta = VolumeMeta { shape: v.shape(), voxel_size: v.voxel_size(), dtype: DTYPE.into(), order: VOLUME_ORDER.into(), extra };
    write_json(&sidecar(path), &meta)
}

pub fn load_volume(path: &Path) -> Result<(VoxelVolume, VolumeMeta)> {
    let meta_path = sidecar(path);
    let meta: VolumeMeta = read_json(&meta_path)?;
    if meta.dtype != DTYPE {
        return Err(Error::parse(&meta_path, "dtype", format!("unsupported {:?}, expected {DTYPE:?}", meta.dtype)));
    }
    if meta.order != VOLUME_ORDER {
        return Err(Error::parse(&meta_path, "order", format!("unsupported {:?}, expected {VOLUME_ORDER:?}", meta.order)));
    }
    let data = read_f32s(path, meta.shape.iter().product())?;
    let v = VoxelVolume::from_vec(meta.shape, meta.voxel_size, data).map_err(|e| Error::parse(&meta_path, "shape", e))?;
    Ok((v, meta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ProjectionRecord {
    angle_deg: f64,
    chrono_index: usize,
    time: f64,
    filename: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SeriesRecord {
    scheme: TiltScheme,
    /// `[rows, cols]`
    detector_shape: [usize; 2],
    dtype: String,
    order: String,
    projections: Vec<ProjectionRecord>,
}

fn projection_file(chrono_index: usize) -> String {
    format!("proj_{chrono_index:04}.f32")
}

/// One raw image per projection plus `series.json`.
pub fn save_tilt_series(dir: &Path, series: &TiltSeries) -> Result<()> {
    ensure_dir(dir)?;
    let mut records = Vec::with_capacity(series.len());
    for p in &series.projections {
        let filename = projection_file(p.chrono_index);
        let path = dir.join(&filename);
        fs::write(&path, encode(p.pixels.data().iter().copied())).at(&path)?;
        records.push(ProjectionRecord { angle_deg: p.angle_deg, chrono_index: p.chrono_index, time: p.time, filename });
    }
    let (rows, cols) = series.detector_shape;
    let record = SeriesRecord {
        scheme: series.scheme.clone(),
        detector_shape: [rows, cols],
        dtype: DTYPE.into(),
        order: IMAGE_ORDER.into(),
        projections: records,
    };
    write_json(&dir.join(SERIES_FILE), &record)
}

pub fn load_tilt_series(dir: &Path) -> Result<TiltSeries> {
    let meta_path = dir.join(SERIES_FILE);
    let record: SeriesRecord = read_json(&meta_path)?;
    let field_err = |field: String, msg: String| Error::parse(&meta_path, field, msg);
    if record.dtype != DTYPE {
        return Err(field_err("dtype".into(), format!("unsupported {:?}", record.dtype)));
    }
    if record.order != IMAGE_ORDER {
        return Err(field_err("order".into(), format!("unsupported {:?}", record.order)));
    }
    record.scheme.validate().map_err(|e| field_err("scheme".into(), e.to_string()))?;
    let [rows, cols] = record.detector_shape;
    let mut series = TiltSeries::new(record.scheme.clone(), (rows, cols));
    for (k, p) in record.projections.iter().enumerate() {
        if !record.scheme.contains_angle(p.angle_deg) {
            return Err(field_err(
                format!("projections[{k}].angle_deg"),
                format!("{} deg outside the annular range +-{}", p.angle_deg, record.scheme.annular_range_deg / 2.0),
            ));
        }
        if p.chrono_index != k + 1 {
            return Err(field_err(format!("projections[{k}].chrono_index"), format!("{} should be {}", p.chrono_index, k + 1)));
        }
        if p.filename.contains(['/', '\\']) {
            return Err(field_err(format!("projections[{k}].filename"), format!("{:?} must be a plain file name", p.filename)));
        }
        let pixels = read_f32s(&dir.join(&p.filename), rows * cols)?;
        series.projections.push(Projection {
            pixels: Image::from_vec(rows, cols, pixels),
            angle_deg: p.angle_deg,
            chrono_index: p.chrono_index,
            time: p.time,
        });
    }
    series.validate().map_err(|e| field_err("projections".into(), e.to_string()))?;
    Ok(series)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceMeta {
    pub plane: Plane,
    pub offset: f64,
    pub rotation_deg: f64,
    pub n_projections: usize,
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    pub order: String,
}

/// Writes `slice_<i>_<plane>.f32` and its sidecar for each slice.
pub fn save_orthoslices(dir: &Path, set: &OrthosliceSet) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut paths = Vec::new();
    for (i, (slice, spec)) in set.slices.iter().zip(&set.specs).enumerate() {
        let path = dir.join(format!("slice_{i}_{}.f32", spec.plane.name()));
        fs::write(&path, encode(slice.data().iter().map(|&v| v as f32))).at(&path)?;
        let meta = SliceMeta {
            plane: spec.plane,
            offset: spec.offset,
            rotation_deg: spec.rotation_deg,
            n_projections: set.n_projections,
            rows: slice.rows(),
            cols: slice.cols(),
            dtype: DTYPE.into(),
            order: IMAGE_ORDER.into(),
        };
        write_json(&sidecar(&path), &meta)?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn load_slice(path: &Path) -> Result<(Image<f32>, SliceMeta)> {
    let meta: SliceMeta = read_json(&sidecar(path))?;
    let data = read_f32s(path, meta.rows * meta.cols)?;
    Ok((Image::from_vec(meta.rows, meta.cols, data), meta))
}

pub const TRACE_HEADER: &str = "N,srod,snr_db,restart_flag";

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per projection count `1..=n_total`; missing metrics are empty
/// cells. Floats use the shortest representation that round-trips.
pub fn trace_csv(trace: &MetricTrace, n_total: usize) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    let lookup = |entries: &[(usize, f64)], n: usize| entries.iter().find(|e| e.0 == n).map(|e| e.1);
    for n in 1..=n_total {
        let restart = u8::from(trace.restarts.contains(&n));
        let _ = writeln!(out, "{n},{},{},{restart}", cell(lookup(&trace.srod, n)), cell(lookup(&trace.snr, n)));
    }
    out
}

pub fn save_trace_csv(path: &Path, trace: &MetricTrace, n_total: usize) -> Result<()> {
    fs::write(path, trace_csv(trace, n_total)).at(path)
}

/// Inverse of [`trace_csv`]; the rule is not stored and comes from the
/// caller. Returns the trace and the number of rows.
pub fn load_trace_csv(path: &Path, rule: StopRule) -> Result<(MetricTrace, usize)> {
    let text = fs::read_to_string(path).at(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(TRACE_HEADER) {
        return Err(Error::parse(path, "header", format!("expected {TRACE_HEADER:?}")));
    }
    let mut trace = MetricTrace::new(rule);
    let mut rows = 0;
    for (k, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        let row = k + 2;
        if cols.len() != 4 {
            return Err(Error::parse(path, format!("line {row}"), format!("expected 4 columns, got {}", cols.len())));
        }
        let num = |i: usize, name: &str| -> Result<Option<f64>> {
            if cols[i].is_empty() {
                return Ok(None);
            }
            cols[i].parse().map(Some).map_err(|e| Error::parse(path, format!("line {row}: {name}"), e))
        };
        let n: usize = cols[0].parse().map_err(|e| Error::parse(path, format!("line {row}: N"), e))?;
        if cols[3] == "1" {
            trace.mark_restart(n);
        } else if cols[3] != "0" {
            return Err(Error::parse(path, format!("line {row}: restart_flag"), format!("{:?} is not 0 or 1", cols[3])));
        }
        trace.record(n, num(1, "srod")?, num(2, "snr_db")?).map_err(|e| Error::parse(path, format!("line {row}: N"), e))?;
        rows += 1;
    }
    Ok((trace, rows))
}

pub const ALIGNMENT_HEADER: &str = "chrono_index,angle_deg,dy,dx,reference_index";

pub fn alignment_csv(result: &AlignmentResult, angles: &[f64]) -> String {
    let mut out = String::from(ALIGNMENT_HEADER);
    out.push('\n');
    for (k, ((dy, dx), r)) in result.shifts.iter().zip(&result.reference_map).enumerate() {
        let r = r.map(|r| r.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{dy},{dx},{r}", k + 1, angles[k]);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).at(dir)? {
        let path = entry.at(dir)?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path != root.join(MANIFEST_FILE) {
            out.push(path);
        }
    }
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).at(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Hashes every file under `dir` (except the manifest itself) and writes
/// `manifest.json`. Paths are relative with `/` separators, sorted.
pub fn write_manifest(dir: &Path) -> Result<Manifest> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    let mut entries = Vec::with_capacity(files.len());
    for path in files {
        let rel = path.strip_prefix(dir).expect("under dir");
        let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        let bytes = fs::metadata(&path).at(&path)?.len();
        entries.push(ManifestEntry { path: rel, bytes, sha256: sha256_file(&path)? });
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest { files: entries };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Re-hashes every listed file; the first mismatch is reported.
pub fn verify_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let manifest: Manifest = read_json(&path)?;
    for (k, e) in manifest.files.iter().enumerate() {
        let file = dir.join(&e.path);
        if sha256_file(&file)? != e.sha256 {
            return Err(Error::parse(&path, format!("files[{k}].sha256"), format!("{} does not match its hash", e.path)));
        }
    }
    Ok(manifest)
}

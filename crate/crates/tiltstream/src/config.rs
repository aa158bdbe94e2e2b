//! Session configuration, loadable from a TOML file.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tiltstream_core::align::{AlignMode, AlignOptions};
use tiltstream_core::damage::DamageParams;
use tiltstream_core::geometry::{grs_angles, is_angles, SchemeKind, TiltScheme};
use tiltstream_core::metrics::StopRule;
use tiltstream_core::phantom::{nanocage, shepp_logan_3d, NanocageSpec};
use tiltstream_core::recon::SliceSpec;
use tiltstream_core::VoxelVolume;

use crate::error::{Error, IoContext, Result};

/// Default output root for sessions and simulations.
pub const OUTPUT_ROOT_ENV: &str = "TILTSTREAM_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhantomConfig {
    Nanocage {
        size: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        outer_radius: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        wall_thickness: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        opening_radius: Option<f64>,
    },
    SheppLogan {
        size: usize,
    },
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig::Nanocage { size: 64, outer_radius: None, wall_thickness: None, opening_radius: None }
    }
}

impl PhantomConfig {
    pub fn size(&self) -> usize {
        match *self {
            PhantomConfig::Nanocage { size, .. } | PhantomConfig::SheppLogan { size } => size,
        }
    }

    pub fn build(&self) -> Result<VoxelVolume> {
        let volume = match *self {
            PhantomConfig::Nanocage { size, outer_radius, wall_thickness, opening_radius } => {
                let d = NanocageSpec::default_for(size);
                let outer = outer_radius.unwrap_or(d.outer_radius);
                let mut spec = NanocageSpec::new(size, outer, wall_thickness.unwrap_or(0.4 * outer));
                if let Some(r) = opening_radius {
                    spec.opening_radius = r;
                }
                nanocage(spec)
            }
            PhantomConfig::SheppLogan { size } => shepp_logan_3d(size),
        };
        volume.map_err(|e| Error::config("phantom", e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    pub annular_range_deg: f64,
    /// Number of golden-ratio images.
    pub n: usize,
    /// Incremental step, used when `kind = "is"`.
    pub increment_deg: f64,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self { kind: SchemeKind::Grs, annular_range_deg: 140.0, n: 71, increment_deg: 2.0 }
    }
}

impl SchemeConfig {
    pub fn build(&self) -> Result<TiltScheme> {
        match self.kind {
            SchemeKind::Grs => grs_angles(self.n, self.annular_range_deg),
            SchemeKind::Is => is_angles(self.increment_deg, self.annular_range_deg),
        }
        .map_err(|e| Error::config("scheme", e))
    }
}

/// Damage model: a named preset, explicit betas, or both (explicit values
/// override the preset).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DamageConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gaussian_sigma: Option<f64>,
}

impl DamageConfig {
    pub fn preset(name: &str) -> Self {
        Self { preset: Some(name.to_string()), ..Self::default() }
    }

    pub fn params(&self, volume_size: usize, seed: u64) -> Result<DamageParams> {
        let base = match &self.preset {
            Some(name) => DamageParams::preset(name, volume_size, seed).map_err(|e| Error::config("damage.preset", e))?,
            None => DamageParams { beta1: 0.0, beta2: 0.0, gaussian_sigma: DamageParams::default_sigma(volume_size), seed },
        };
        let params = DamageParams {
            beta1: self.beta1.unwrap_or(base.beta1),
            beta2: self.beta2.unwrap_or(base.beta2),
            gaussian_sigma: self.gaussian_sigma.unwrap_or(base.gaussian_sigma),
            seed,
        };
        params.validate().map_err(|e| Error::config("damage", e))?;
        Ok(params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    pub enabled: bool,
    pub mode: AlignMode,
    pub center: bool,
    pub subpixel: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_shift: Option<usize>,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self { enabled: true, mode: AlignMode::Chronological, center: false, subpixel: false, max_shift: None }
    }
}

impl AlignConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    /// `None` when alignment is switched off.
    pub fn options(&self) -> Option<AlignOptions> {
        self.enabled.then_some(AlignOptions { mode: self.mode, center: self.center, subpixel: self.subpixel, max_shift: self.max_shift })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventConfig {
    /// Events queued per subscriber before a slow subscriber is cut off.
    pub buffer: usize,
    /// Whether `slices_updated` carries the slice pixels.
    pub slice_data: bool,
    /// Block after each new stop suggestion until the operator sends
    /// `continue` or `stop`.
    pub pause_on_suggestion: bool,
}

impl Default for EventConfig {
    fn default() -> Self {
        Self { buffer: 1024, slice_data: true, pause_on_suggestion: false }
    }
}

fn default_slices() -> Vec<SliceSpec> {
    SliceSpec::default_set().to_vec()
}

fn default_em_iterations() -> usize {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_em_iterations")]
    pub em_iterations: usize,
    /// Local address the event stream is served on, e.g. `127.0.0.1:7878`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub phantom: PhantomConfig,
    #[serde(default)]
    pub scheme: SchemeConfig,
    #[serde(default)]
    pub damage: DamageConfig,
    #[serde(default)]
    pub stop_rule: StopRule,
    #[serde(default)]
    pub align: AlignConfig,
    #[serde(default)]
    pub events: EventConfig,
    #[serde(default = "default_slices")]
    pub slices: Vec<SliceSpec>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            em_iterations: default_em_iterations(),
            emit: None,
            output_dir: None,
            phantom: PhantomConfig::default(),
            scheme: SchemeConfig::default(),
            damage: DamageConfig::default(),
            stop_rule: StopRule::default(),
            align: AlignConfig::default(),
            events: EventConfig::default(),
            slices: default_slices(),
        }
    }
}

impl SessionConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: SessionConfig = toml::from_str(text).map_err(|e| Error::config(toml_field(text, &e), e.message()))?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config always serializes")
    }

    /// Volume shape of the phantom (and of every reconstruction).
    pub fn volume_shape(&self) -> [usize; 3] {
        [self.phantom.size(); 3]
    }

    pub fn slice_specs(&self) -> Result<[SliceSpec; 3]> {
        let specs: [SliceSpec; 3] = self
            .slices
            .clone()
            .try_into()
            .map_err(|v: Vec<SliceSpec>| Error::config("slices", format!("need exactly 3 slices, got {}", v.len())))?;
        for (i, s) in specs.iter().enumerate() {
            s.validate(self.volume_shape()).map_err(|e| Error::config(format!("slices[{i}]"), e))?;
        }
        Ok(specs)
    }

    pub fn damage_params(&self) -> Result<DamageParams> {
        self.damage.params(self.phantom.size(), self.seed)
    }

    pub fn emit_addr(&self) -> Result<Option<SocketAddr>> {
        self.emit.as_deref().map(|a| a.parse().map_err(|e| Error::config("emit", format!("{a:?}: {e}")))).transpose()
    }

    /// Checks every field without building the phantom.
    pub fn validate(&self) -> Result<()> {
        if self.phantom.size() < 16 {
            return Err(Error::config("phantom.size", format!("{} is below the minimum of 16", self.phantom.size())));
        }
        self.scheme.build()?;
        self.damage_params()?;
        self.slice_specs()?;
        let rule = self.stop_rule;
        if !(rule.srod_threshold > 0.0 && rule.srod_threshold.is_finite()) {
            return Err(Error::config("stop_rule.srod_threshold", format!("{} must be positive", rule.srod_threshold)));
        }
        if !(rule.snr_decline_db >= 0.0) {
            return Err(Error::config("stop_rule.snr_decline_db", format!("{} must be >= 0", rule.snr_decline_db)));
        }
        if self.em_iterations == 0 {
            return Err(Error::config("em_iterations", "must be at least 1"));
        }
        if self.events.buffer == 0 {
            return Err(Error::config("events.buffer", "must be at least 1"));
        }
        self.emit_addr()?;
        Ok(())
    }

    /// `output_dir`, else `$TILTSTREAM_OUTPUT_ROOT/session-<seed>`, else
    /// `tiltstream-out/session-<seed>`.
    pub fn resolved_output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| output_root().join(format!("session-{}", self.seed)))
    }
}

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("tiltstream-out"))
}

/// Best-effort name of the offending key in a TOML error: a key quoted in
/// the message, else the `table.key` at the reported position.
fn toml_field(text: &str, e: &toml::de::Error) -> String {
    if let Some(quoted) = e.message().split('`').nth(1) {
        return quoted.to_string();
    }
    let Some(span) = e.span() else {
        return "config".to_string();
    };
    let before = &text[..span.start.min(text.len())];
    let line = before.rsplit('\n').next().unwrap_or("");
    let key = line.split('=').next().unwrap_or("").trim();
    let table = before.lines().rev().map(str::trim).find(|l| l.starts_with('[')).map(|l| l.trim_matches(|c| c == '[' || c == ']').trim());
    match (table, key.is_empty() || line.trim_start().starts_with('[')) {
        (_, true) => table.unwrap_or("config").to_string(),
        (Some(t), false) => format!("{t}.{key}"),
        (None, false) => key.to_string(),
    }
}

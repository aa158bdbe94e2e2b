use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use tiltstream::analyze::{analyze, reconstruct, report_table, AnalyzeOptions, RecordedSession};
use tiltstream::config::{PhantomConfig, SessionConfig};
use tiltstream::error::{Error, Result};
use tiltstream::io;
use tiltstream::session::{Session, CONFIG_FILE, REFERENCE_FILE, SERIES_DIR, TRACE_FILE};
use tiltstream::stream::ControlScript;
use tiltstream_core::align::AlignMode;
use tiltstream_core::damage::uniform_times;
use tiltstream_core::geometry::SchemeKind;
use tiltstream_core::projector::simulate_acquisition;

#[derive(Parser)]
#[command(name = "tiltstream", version, about = "Streaming tilt-series tomography with an automatic stopping point")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a damaged acquisition and save the tilt series.
    Simulate(SimulateArgs),
    /// Run a live session, optionally serving events on a local socket.
    Session(SessionArgs),
    /// Replay a saved series through the streaming metrics.
    Analyze(AnalyzeArgs),
    /// EM reconstruction from the first N projections.
    Reconstruct(ReconstructArgs),
    /// SROD / SNR table, with shape errors at chosen N.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PhantomKind {
    Nanocage,
    SheppLogan,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scheme {
    Grs,
    Is,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Chronological,
    NearestAngle,
}

/// Overrides for the config file. Unset flags keep the file's value.
#[derive(Args)]
struct ConfigArgs {
    /// TOML session config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    phantom: Option<PhantomKind>,
    /// Phantom edge length in voxels.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long, value_enum)]
    scheme: Option<Scheme>,
    /// Number of golden-ratio projections.
    #[arg(long)]
    n: Option<usize>,
    /// Incremental step in degrees.
    #[arg(long)]
    increment: Option<f64>,
    /// Annular range in degrees.
    #[arg(long)]
    range: Option<f64>,
    /// Damage preset, e.g. NC-1 .. NC-4.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    /// SROD convergence threshold.
    #[arg(long)]
    threshold: Option<f64>,
    /// SNR drop from the peak that counts as damage, in dB.
    #[arg(long)]
    decline_db: Option<f64>,
    /// Projections the SNR drop has to persist.
    #[arg(long)]
    sustain: Option<usize>,
    #[arg(long)]
    em_iterations: Option<usize>,
    /// Turn projection alignment off.
    #[arg(long)]
    no_align: bool,
    #[arg(long, value_enum)]
    align_mode: Option<Mode>,
    /// Centre the particle before correlating.
    #[arg(long)]
    center: bool,
    /// Parabolic sub-pixel peak refinement.
    #[arg(long)]
    subpixel: bool,
    #[arg(long)]
    max_shift: Option<usize>,
    /// Output directory.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<SessionConfig> {
        let base = match &self.config {
            Some(path) => SessionConfig::load(path)?,
            None => SessionConfig::default(),
        };
        self.apply(base)
    }

    fn apply(&self, mut c: SessionConfig) -> Result<SessionConfig> {
        if let Some(v) = self.seed {
            c.seed = v;
        }
        let size = self.size.unwrap_or(c.phantom.size());
        match self.phantom {
            Some(PhantomKind::Nanocage) => {
                c.phantom = PhantomConfig::Nanocage { size, outer_radius: None, wall_thickness: None, opening_radius: None }
            }
            Some(PhantomKind::SheppLogan) => c.phantom = PhantomConfig::SheppLogan { size },
            None => match &mut c.phantom {
                PhantomConfig::Nanocage { size: s, .. } | PhantomConfig::SheppLogan { size: s } => *s = size,
            },
        }
        match self.scheme {
            Some(Scheme::Grs) => c.scheme.kind = SchemeKind::Grs,
            Some(Scheme::Is) => c.scheme.kind = SchemeKind::Is,
            None => {}
        }
        set(&mut c.scheme.n, self.n);
        set(&mut c.scheme.increment_deg, self.increment);
        set(&mut c.scheme.annular_range_deg, self.range);
        if self.preset.is_some() {
            c.damage.preset = self.preset.clone();
        }
        if self.beta1.is_some() {
            c.damage.beta1 = self.beta1;
        }
        if self.beta2.is_some() {
            c.damage.beta2 = self.beta2;
        }
        if self.sigma.is_some() {
            c.damage.gaussian_sigma = self.sigma;
        }
        set(&mut c.stop_rule.srod_threshold, self.threshold);
        set(&mut c.stop_rule.snr_decline_db, self.decline_db);
        set(&mut c.stop_rule.decline_sustain, self.sustain);
        set(&mut c.em_iterations, self.em_iterations);
        if self.no_align {
            c.align.enabled = false;
        }
        match self.align_mode {
            Some(Mode::Chronological) => c.align.mode = AlignMode::Chronological,
            Some(Mode::NearestAngle) => c.align.mode = AlignMode::NearestAngle,
            None => {}
        }
        c.align.center |= self.center;
        c.align.subpixel |= self.subpixel;
        if self.max_shift.is_some() {
            c.align.max_shift = self.max_shift;
        }
        if self.output.is_some() {
            c.output_dir = self.output.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SessionArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Serve events on this local address, e.g. 127.0.0.1:7878.
    #[arg(long)]
    emit: Option<String>,
    /// JSON control script: `[{"after": 30, "command": "stop"}]`.
    #[arg(long)]
    controls: Option<PathBuf>,
    /// Wait for `continue` or `stop` after each new suggestion.
    #[arg(long)]
    pause_on_suggestion: bool,
    /// Leave slice pixels out of `slices_updated` events.
    #[arg(long)]
    no_slice_data: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Session directory, or a bare series directory.
    path: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Control script to replay; defaults to the session's `controls.json`.
    #[arg(long)]
    controls: Option<PathBuf>,
    /// Also run EM at the suggested N.
    #[arg(long)]
    reconstruct: bool,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Session directory, or a bare series directory.
    path: PathBuf,
    /// Projections to use; defaults to all.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 30)]
    iterations: usize,
    /// Reference volume for the shape error.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Output volume file.
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Session directory.
    path: PathBuf,
    /// N values at which to report the EM shape error.
    #[arg(long, value_delimiter = ',')]
    es_at: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    iterations: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Session(a) => session(a),
        Command::Analyze(a) => run_analyze(a),
        Command::Reconstruct(a) => run_reconstruct(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let config = args.config.resolve()?;
    let dir = config.resolved_output_dir();
    let phantom = config.phantom.build()?;
    let scheme = config.scheme.build()?;
    let series = simulate_acquisition(&phantom, &scheme, &config.damage_params()?, &uniform_times(scheme.len()))?;
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(CONFIG_FILE);
    fs::write(&path, config.to_toml()).map_err(|e| Error::io(&path, e))?;
    io::save_volume(&dir.join(REFERENCE_FILE), &phantom, Default::default())?;
    io::save_tilt_series(&dir.join(SERIES_DIR), &series)?;
    io::write_manifest(&dir)?;
    println!("{} projections written to {}", series.len(), dir.display());
    Ok(())
}

fn session(args: SessionArgs) -> Result<()> {
    let mut config = args.config.resolve()?;
    if args.emit.is_some() {
        config.emit = args.emit;
    }
    config.events.pause_on_suggestion |= args.pause_on_suggestion;
    if args.no_slice_data {
        config.events.slice_data = false;
    }
    let script: ControlScript = match &args.controls {
        Some(p) => io::read_json(p)?,
        None => ControlScript::new(),
    };
    let session = Session::new(config)?.with_script(script);
    if let Some(addr) = session.local_addr() {
        eprintln!("serving events on {addr}");
    }
    let out = session.run()?;
    println!("{}", serde_json::to_string_pretty(&out.stop).expect("plain data"));
    println!("artifacts in {}", out.output_dir.display());
    Ok(())
}

/// A session directory, or a series directory with no session around it.
fn open(path: &Path) -> Result<RecordedSession> {
    if path.join(CONFIG_FILE).exists() {
        return RecordedSession::load(path);
    }
    Ok(RecordedSession {
        dir: path.to_path_buf(),
        config: SessionConfig::default(),
        series: io::load_tilt_series(path)?,
        controls: ControlScript::new(),
    })
}

fn run_analyze(args: AnalyzeArgs) -> Result<()> {
    let mut recorded = open(&args.path)?;
    // flags refine the recorded config; its output_dir is where the session
    // lives, not where a replay should write
    let mut base = match &args.config.config {
        Some(path) => SessionConfig::load(path)?,
        None => recorded.config.clone(),
    };
    base.output_dir = None;
    recorded.config = args.config.apply(base)?;
    if let Some(p) = &args.controls {
        recorded.controls = io::read_json(p)?;
    }
    let options: AnalyzeOptions = recorded.options()?;
    let analysis = analyze(&recorded.series, &options)?;
    let csv = io::trace_csv(&analysis.trace, analysis.n_processed);
    let mut summary = json!({
        "n_processed": analysis.n_processed,
        "recommendation": analysis.recommendation,
    });
    if args.reconstruct {
        let n = analysis.recommendation.suggested_n.unwrap_or(analysis.n_processed);
        let reference = recorded.reference()?;
        let (v, es) = reconstruct(&recorded.series, n, recorded.config.em_iterations, reference.as_ref())?;
        summary["em"] = json!({ "n_used": n, "shape_error": es });
        if let Some(dir) = &recorded.config.output_dir {
            let mut extra = std::collections::BTreeMap::new();
            extra.insert("n_used".to_string(), json!(n));
            extra.insert("em_iterations".to_string(), json!(recorded.config.em_iterations));
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            io::save_volume(&dir.join("em.f32"), &v, extra)?;
        }
    }
    match &recorded.config.output_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(TRACE_FILE);
            fs::write(&path, &csv).map_err(|e| Error::io(&path, e))?;
            io::write_json(&dir.join("analysis.json"), &summary)?;
        }
        None => print!("{csv}"),
    }
    println!("{}", serde_json::to_string_pretty(&summary).expect("plain data"));
    Ok(())
}

fn run_reconstruct(args: ReconstructArgs) -> Result<()> {
    let recorded = open(&args.path)?;
    let n = args.n.unwrap_or(recorded.series.len());
    let reference = match &args.reference {
        Some(p) => Some(io::load_volume(p)?.0),
        None => recorded.reference()?,
    };
    let (v, es) = reconstruct(&recorded.series, n, args.iterations, reference.as_ref())?;
    let mut extra = std::collections::BTreeMap::new();
    extra.insert("n_used".to_string(), json!(n));
    extra.insert("em_iterations".to_string(), json!(args.iterations));
    io::save_volume(&args.output, &v, extra)?;
    println!("{}", json!({ "n_used": n, "shape_error": es, "output": args.output }));
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let recorded = open(&args.path)?;
    let options = recorded.options()?;
    let analysis = analyze(&recorded.series, &options)?;
    let reference = recorded.reference()?;
    let mut errors = Vec::new();
    if let Some(r) = &reference {
        for &n in &args.es_at {
            if let (_, Some(e)) = reconstruct(&recorded.series, n, args.iterations, Some(r))? {
                errors.push((n, e));
            }
        }
    } else if !args.es_at.is_empty() {
        return Err(Error::config("es_at", "no reference volume in this directory"));
    }
    print!("{}", report_table(&analysis.trace, analysis.n_processed, &errors));
    Ok(())
}

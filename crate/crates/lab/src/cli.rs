//! Command-line pipeline: `gen`, `simulate`, `identify`, `analyze`, `report`,
//! `serve` and `replay`.
//!
//! Every command is first resolved (seeds drawn, defaults and output paths
//! filled in, input paths made absolute), then validated, then run. The
//! resolved command is written next to the primary output as
//! `<output>.manifest.json`, from which `replay` reruns it.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use follower_lab_core::sysid::{
    coupling_report, fit_unstructured, segment_analysis, CouplingReport, FitOptions, FitResult,
};
use follower_lab_core::trajectory::{
    gen_filtered_noise, gen_fourier, gen_orientation_noise, DEFAULT_CUTOFF_HZ, DEFAULT_FOURIER_DURATION_S,
    DEFAULT_NOISE_DURATION_S, DEFAULT_RATE_HZ, MAX_ROTATION_RAD,
};
use follower_lab_core::{
    block_diagonal, build_state_space, simulate, ContactLaw, EnvParams, FollowerParams, FourierSpec, NoiseModel,
    NoiseTrajSpec, SimConfig, Trajectory,
};
use serde::{Deserialize, Serialize};

use crate::capture::{self, CaptureConfig};
use crate::error::{LabError, Result};
use crate::report::{
    analyze, fit_axes, write_figures, AnalysisReport, AnalyzeOptions, AxisFit, TimeInvariance, FIGURE_FAMILIES,
};
use crate::session::{
    export_session_csv, export_trajectory_csv, load_session, load_trajectory, save_session, save_trajectory,
    write_atomically, SESSION_EXTENSION, TRAJECTORY_EXTENSION,
};

/// Default output root when `FOLLOWER_LAB_DATA_DIR` is unset.
pub const DEFAULT_DATA_DIR: &str = "follower-lab-data";
pub const MANIFEST_SUFFIX: &str = ".manifest.json";
const FIT_EXTENSION: &str = "fit.json";
const REPORT_EXTENSION: &str = "report.json";

#[derive(Debug, Parser)]
#[command(name = "follower-lab", version, about = "Identify and analyze teleoperation follower dynamics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "snake_case")]
pub enum Command {
    /// Generate a Fourier or filtered-noise trajectory.
    Gen(GenArgs),
    /// Simulate a follower driven by a trajectory.
    Simulate(SimulateArgs),
    /// Fit follower models to a session.
    Identify(IdentifyArgs),
    /// Run the analysis suite on a session.
    Analyze(AnalyzeArgs),
    /// Fit, analyze and write every figure family for a session.
    Report(ReportArgs),
    /// Run the live capture service.
    Serve(ServeArgs),
    /// Rerun a command from its manifest.
    #[serde(skip)]
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryType {
    Noise,
    Fourier,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GenArgs {
    #[arg(long = "type", value_enum, default_value = "noise")]
    pub kind: TrajectoryType,
    /// Band edge of filtered noise, or highest allowed Fourier component (Hz).
    #[arg(long)]
    pub cutoff: Option<f64>,
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_RATE_HZ)]
    pub rate: f64,
    /// Drawn at random and recorded in the manifest when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of position axes.
    #[arg(long, default_value_t = 3)]
    pub axes: usize,
    /// Number of rotation channels, each spanning ±50°.
    #[arg(long, default_value_t = 0)]
    pub rotations: usize,
    /// Position half-range per axis (m).
    #[arg(long, default_value_t = 0.15)]
    pub half_range: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a CSV export next to the output.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// Trajectory file (`.traj.json`).
    #[arg(long)]
    pub input: PathBuf,
    /// Mass per axis (kg); a single value applies to every axis.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub m: Vec<f64>,
    /// Damping per axis (N·s/m).
    #[arg(long, value_delimiter = ',', default_value = "20")]
    pub b: Vec<f64>,
    /// Stiffness per axis (N/m).
    #[arg(long, value_delimiter = ',', default_value = "270")]
    pub k: Vec<f64>,
    /// Environment stiffness (N/m); a positive value enables the surface.
    #[arg(long, default_value_t = 0.0)]
    pub kp: f64,
    /// Environment damping (N·s/m).
    #[arg(long, default_value_t = 0.0)]
    pub bp: f64,
    #[arg(long, default_value_t = 0.0)]
    pub surface_height: f64,
    #[arg(long, default_value_t = 0)]
    pub contact_axis: usize,
    /// Use the signed linear force row instead of the unilateral contact law.
    #[arg(long)]
    pub linear_contact: bool,
    /// Output position noise (m); zero disables noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise_sigma: f64,
    #[arg(long)]
    pub noise_seed: Option<u64>,
    /// Leave the force channel noise-free.
    #[arg(long)]
    pub no_force_noise: bool,
    /// Defaults to the output file stem.
    #[arg(long)]
    pub session_id: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Structured,
    Unstructured,
    Segments,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FitArgs {
    #[arg(long, default_value_t = 1.0)]
    pub init_m: f64,
    #[arg(long, default_value_t = 10.0)]
    pub init_b: f64,
    #[arg(long, default_value_t = 100.0)]
    pub init_k: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iterations: usize,
    /// Fit the mass too (only identifiable with force data).
    #[arg(long)]
    pub free_mass: bool,
    /// Weight of the force rows in the cost.
    #[arg(long, default_value_t = 0.0)]
    pub force_weight: f64,
}

impl FitArgs {
    fn init(&self) -> Result<FollowerParams> {
        Ok(FollowerParams::new(self.init_m, self.init_b, self.init_k)?)
    }

    fn options(&self) -> Result<FitOptions> {
        let opts = FitOptions {
            max_iterations: self.max_iterations,
            fix_mass: !self.free_mass,
            force_weight: self.force_weight,
            ..FitOptions::default()
        };
        opts.validate()?;
        Ok(opts)
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct IdentifyArgs {
    #[arg(long)]
    pub session: PathBuf,
    #[arg(long, value_enum, default_value = "structured")]
    pub method: Method,
    /// Segment count for `--method segments`.
    #[arg(long, default_value_t = 4)]
    pub segments: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct AnalysisToggles {
    #[arg(long)]
    pub no_spectra: bool,
    #[arg(long)]
    pub no_coherence: bool,
    #[arg(long)]
    pub no_nyquist: bool,
    #[arg(long)]
    pub no_energy: bool,
    #[arg(long)]
    pub no_residuals: bool,
    #[arg(long)]
    pub no_path: bool,
    /// Unstructured fit and off-block coupling statistics.
    #[arg(long)]
    pub coupling: bool,
    /// Segment count for the time-invariance check; 0 skips it.
    #[arg(long, default_value_t = 0)]
    pub segments: usize,
    #[arg(long, default_value_t = 0)]
    pub baseline_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub session: PathBuf,
    /// Identification output whose parameters start the fits.
    #[arg(long)]
    pub fit_file: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub toggles: AnalysisToggles,
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for figure CSV and SVG files.
    #[arg(long)]
    pub figures_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    #[arg(long)]
    pub session: PathBuf,
    #[arg(long)]
    pub fit_file: Option<PathBuf>,
    #[arg(long)]
    pub coupling: bool,
    #[arg(long, default_value_t = 4)]
    pub segments: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitArgs,
    #[arg(long)]
    pub baseline_seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ServeArgs {
    #[arg(long, env = "CAPTURE_PORT", default_value_t = capture::DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, env = "CAPTURE_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    /// Seconds without a sample before a running session is aborted.
    #[arg(long, default_value_t = capture::DEFAULT_SAMPLE_TIMEOUT_S)]
    pub sample_timeout: f64,
    /// Playback speed factor; 1 is real time.
    #[arg(long, default_value_t = 1.0)]
    pub speed: f64,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: String,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Write outputs here instead of their recorded locations.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub outputs: Vec<PathBuf>,
}

/// Output of `identify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifyReport {
    pub session_id: String,
    pub method: Method,
    pub converged: bool,
    pub fits: Vec<AxisFit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unstructured: Option<FitResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<CouplingReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_invariance: Option<TimeInvariance>,
}

/// Output of `report`: the analysis plus the identification it started from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedReport {
    pub analysis: AnalysisReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identification: Option<IdentifyReport>,
    pub figure_families: Vec<String>,
    /// Figure files, relative to the report directory.
    pub figure_files: Vec<PathBuf>,
}

pub fn data_root() -> PathBuf {
    std::env::var_os("FOLLOWER_LAB_DATA_DIR").map_or_else(|| PathBuf::from(DEFAULT_DATA_DIR), PathBuf::from)
}

/// File name with a known compound extension removed.
pub fn base_name(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    for ext in [SESSION_EXTENSION, TRAJECTORY_EXTENSION, FIT_EXTENSION, REPORT_EXTENSION, "json", "ndjson"] {
        if let Some(stem) = name.strip_suffix(&format!(".{ext}")) {
            return stem.to_string();
        }
    }
    name
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(MANIFEST_SUFFIX);
    PathBuf::from(name)
}

fn absolute(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).map_err(|e| LabError::io(path, e))
}

fn existing(path: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(path).map_err(|e| LabError::io(path, e))
}

fn validation(msg: impl Into<String>) -> LabError {
    LabError::Validation(msg.into())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(validation(format!("--{name} must be positive, got {v}")))
    }
}

impl Command {
    /// Fills in every default so the command reproduces its own outputs.
    pub fn resolve(self) -> Result<Command> {
        let root = data_root();
        Ok(match self {
            Command::Gen(mut a) => {
                let seed = *a.seed.get_or_insert_with(rand::random);
                a.duration.get_or_insert(match a.kind {
                    TrajectoryType::Noise => DEFAULT_NOISE_DURATION_S,
                    TrajectoryType::Fourier => DEFAULT_FOURIER_DURATION_S,
                });
                a.cutoff.get_or_insert(DEFAULT_CUTOFF_HZ);
                let kind = match a.kind {
                    TrajectoryType::Noise => "noise",
                    TrajectoryType::Fourier => "fourier",
                };
                let out = a.out.take().unwrap_or_else(|| root.join(format!("{kind}-{seed}.{TRAJECTORY_EXTENSION}")));
                a.out = Some(absolute(&out)?);
                Command::Gen(a)
            }
            Command::Simulate(mut a) => {
                a.input = existing(&a.input)?;
                if a.noise_sigma > 0.0 {
                    a.noise_seed.get_or_insert_with(rand::random);
                }
                let out = a
                    .out
                    .take()
                    .unwrap_or_else(|| root.join(format!("{}-sim.{SESSION_EXTENSION}", base_name(&a.input))));
                let out = absolute(&out)?;
                a.session_id.get_or_insert_with(|| base_name(&out));
                a.out = Some(out);
                Command::Simulate(a)
            }
            Command::Identify(mut a) => {
                a.session = existing(&a.session)?;
                let out = a.out.take().unwrap_or_else(|| root.join(format!("{}.{FIT_EXTENSION}", base_name(&a.session))));
                a.out = Some(absolute(&out)?);
                Command::Identify(a)
            }
            Command::Analyze(mut a) => {
                a.session = existing(&a.session)?;
                a.fit_file = a.fit_file.as_deref().map(existing).transpose()?;
                let base = base_name(&a.session);
                let out = absolute(&a.out.take().unwrap_or_else(|| root.join(format!("{base}.{REPORT_EXTENSION}"))))?;
                let figures = a.figures_dir.take().unwrap_or_else(|| {
                    out.with_file_name(format!("{}-figures", base_name(&out)))
                });
                a.figures_dir = Some(absolute(&figures)?);
                a.out = Some(out);
                Command::Analyze(a)
            }
            Command::Report(mut a) => {
                a.session = existing(&a.session)?;
                a.fit_file = a.fit_file.as_deref().map(existing).transpose()?;
                a.baseline_seed.get_or_insert(0);
                let dir = a.out_dir.take().unwrap_or_else(|| root.join(format!("{}-report", base_name(&a.session))));
                a.out_dir = Some(absolute(&dir)?);
                Command::Report(a)
            }
            Command::Serve(mut a) => {
                let dir = a.data_dir.take().unwrap_or_else(|| root.join("capture"));
                a.data_dir = Some(absolute(&dir)?);
                Command::Serve(a)
            }
            Command::Replay(a) => Command::Replay(a),
        })
    }

    /// Checks flag values; runs after [`Command::resolve`].
    pub fn validate(&self) -> Result<()> {
        match self {
            Command::Gen(a) => {
                positive("rate", a.rate)?;
                positive("duration", a.duration.unwrap_or(1.0))?;
                if a.axes == 0 {
                    return Err(validation("--axes must be at least 1"));
                }
                if !(a.half_range >= 0.0) || !a.half_range.is_finite() {
                    return Err(validation(format!("--half-range must be finite and >= 0, got {}", a.half_range)));
                }
                if let Some(c) = a.cutoff {
                    if !(c > 0.0 && c < a.rate / 2.0) {
                        return Err(validation(format!("--cutoff must satisfy 0 < cutoff < rate/2 = {}, got {c}", a.rate / 2.0)));
                    }
                }
            }
            Command::Simulate(a) => {
                for (name, list) in [("m", &a.m), ("b", &a.b), ("k", &a.k)] {
                    if list.is_empty() {
                        return Err(validation(format!("--{name} needs at least one value")));
                    }
                    for v in list {
                        positive(name, *v)?;
                    }
                }
                if !(a.noise_sigma >= 0.0) || !a.noise_sigma.is_finite() {
                    return Err(validation(format!("--noise-sigma must be >= 0, got {}", a.noise_sigma)));
                }
                env_params(a)?;
            }
            Command::Identify(a) => {
                a.fit.init()?;
                a.fit.options()?;
                if a.method == Method::Segments && a.segments < 2 {
                    return Err(validation("--segments must be at least 2"));
                }
            }
            Command::Analyze(a) => {
                a.fit.init()?;
                a.fit.options()?;
            }
            Command::Report(a) => {
                a.fit.init()?;
                a.fit.options()?;
            }
            Command::Serve(a) => {
                positive("sample-timeout", a.sample_timeout)?;
                positive("speed", a.speed)?;
            }
            Command::Replay(_) => {}
        }
        Ok(())
    }

    /// Primary output, next to which the manifest is written.
    fn primary_output(&self) -> Option<PathBuf> {
        match self {
            Command::Gen(a) => a.out.clone(),
            Command::Simulate(a) => a.out.clone(),
            Command::Identify(a) => a.out.clone(),
            Command::Analyze(a) => a.out.clone(),
            Command::Report(a) => a.out_dir.as_ref().map(|d| d.join(REPORT_EXTENSION)),
            Command::Serve(a) => a.data_dir.as_ref().map(|d| d.join("serve")),
            Command::Replay(_) => None,
        }
    }

    /// Moves every output into `dir`, keeping file names.
    fn redirect(&mut self, dir: &Path) {
        let move_to = |p: &mut Option<PathBuf>| {
            if let Some(name) = p.as_ref().and_then(|p| p.file_name()).map(|n| n.to_owned()) {
                *p = Some(dir.join(name));
            }
        };
        match self {
            Command::Gen(a) => move_to(&mut a.out),
            Command::Simulate(a) => move_to(&mut a.out),
            Command::Identify(a) => move_to(&mut a.out),
            Command::Analyze(a) => {
                move_to(&mut a.out);
                move_to(&mut a.figures_dir);
            }
            Command::Report(a) => a.out_dir = Some(dir.to_path_buf()),
            Command::Serve(a) => a.data_dir = Some(dir.to_path_buf()),
            Command::Replay(_) => {}
        }
    }
}

fn env_params(a: &SimulateArgs) -> Result<EnvParams> {
    if a.kp > 0.0 || a.bp > 0.0 {
        Ok(EnvParams::surface(a.kp, a.bp, a.surface_height, a.contact_axis)?)
    } else {
        Ok(EnvParams::free_space())
    }
}

/// Per-axis value from a list that is either one value or one per axis.
fn per_axis(name: &str, list: &[f64], n: usize) -> Result<Vec<f64>> {
    match list.len() {
        1 => Ok(vec![list[0]; n]),
        len if len == n => Ok(list.to_vec()),
        len => Err(validation(format!("--{name} has {len} values; the input has {n} channels"))),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomically(path, |out| {
        serde_json::to_writer_pretty(&mut *out, value)?;
        std::io::Write::write_all(out, b"\n")
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| LabError::parse(path, e.line(), e.to_string()))
}

pub fn write_manifest(command: &Command, outputs: &[PathBuf]) -> Result<Option<PathBuf>> {
    let Some(primary) = command.primary_output() else {
        return Ok(None);
    };
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.clone(),
        outputs: outputs.to_vec(),
    };
    let path = manifest_path(&primary);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    }
    write_json(&path, &manifest)?;
    Ok(Some(path))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    read_json(path)
}

/// Resolves, validates and runs a command, writing its manifest. Commands
/// with non-converged fits write their outputs and manifest before
/// returning [`LabError::NonConvergence`].
pub fn run(command: Command) -> Result<Vec<PathBuf>> {
    if let Command::Replay(a) = command {
        let manifest = read_manifest(&a.manifest)?;
        let mut cmd = manifest.command;
        if let Some(dir) = &a.out_dir {
            cmd.redirect(&absolute(dir)?);
        }
        return execute(cmd);
    }
    execute(command.resolve()?)
}

fn execute(command: Command) -> Result<Vec<PathBuf>> {
    command.validate()?;
    let (outputs, outcome) = match &command {
        Command::Gen(a) => (cmd_gen(a)?, Ok(())),
        Command::Simulate(a) => (cmd_simulate(a)?, Ok(())),
        Command::Identify(a) => cmd_identify(a)?,
        Command::Analyze(a) => cmd_analyze(a)?,
        Command::Report(a) => cmd_report(a)?,
        Command::Serve(a) => {
            write_manifest(&command, &[])?;
            cmd_serve(a)?;
            return Ok(vec![]);
        }
        Command::Replay(_) => return Err(validation("a manifest cannot replay another replay")),
    };
    write_manifest(&command, &outputs)?;
    outcome.map(|_| outputs)
}

fn out_path(p: &Option<PathBuf>) -> Result<&Path> {
    p.as_deref().ok_or_else(|| validation("output path not resolved"))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e)),
        _ => Ok(()),
    }
}

fn csv_path(out: &Path) -> PathBuf {
    out.with_file_name(format!("{}.csv", base_name(out)))
}

pub fn cmd_gen(a: &GenArgs) -> Result<Vec<PathBuf>> {
    let seed = a.seed.ok_or_else(|| validation("seed not resolved"))?;
    let duration = a.duration.unwrap_or(DEFAULT_NOISE_DURATION_S);
    let cutoff = a.cutoff.unwrap_or(DEFAULT_CUTOFF_HZ);
    let mut traj = match a.kind {
        TrajectoryType::Noise => {
            let mut spec = NoiseTrajSpec::new(seed, vec![(-a.half_range, a.half_range); a.axes]);
            spec.duration_s = duration;
            spec.rate_hz = a.rate;
            spec.cutoff_hz = cutoff;
            gen_filtered_noise(&spec)?
        }
        TrajectoryType::Fourier => {
            let mut spec = FourierSpec::default_multisine(a.axes, a.half_range, seed);
            spec.duration_s = duration;
            spec.rate_hz = a.rate;
            spec.max_frequency_hz = cutoff;
            gen_fourier(&spec)?
        }
    };
    if a.rotations > 0 {
        let mut spec = NoiseTrajSpec::new(seed.wrapping_add(1), vec![(-MAX_ROTATION_RAD, MAX_ROTATION_RAD); a.rotations]);
        spec.duration_s = duration;
        spec.rate_hz = a.rate;
        spec.cutoff_hz = cutoff;
        traj = traj.merged(gen_orientation_noise(&spec)?)?;
    }
    let out = out_path(&a.out)?;
    ensure_parent(out)?;
    save_trajectory(out, &traj)?;
    let mut outputs = vec![out.to_path_buf()];
    if a.csv {
        let csv = csv_path(out);
        export_trajectory_csv(&csv, &traj)?;
        outputs.push(csv);
    }
    tracing::info!(samples = traj.len(), path = %out.display(), "trajectory written");
    Ok(outputs)
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<Vec<PathBuf>> {
    let input: Trajectory = load_trajectory(&a.input)?;
    let n = input.n_channels();
    let (m, b, k) = (per_axis("m", &a.m, n)?, per_axis("b", &a.b, n)?, per_axis("k", &a.k, n)?);
    let env = env_params(a)?;
    if env.enabled && env.axis >= n {
        return Err(validation(format!("--contact-axis {} is out of range for {n} channels", env.axis)));
    }
    let blocks = (0..n)
        .map(|c| {
            let params = FollowerParams::new(m[c], b[c], k[c])?;
            let axis_env = if env.enabled && c == env.axis { env } else { EnvParams::free_space() };
            build_state_space(&params, &axis_env)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let model = block_diagonal(&blocks)?;
    let noise = (a.noise_sigma > 0.0).then(|| NoiseModel {
        sigma_pos: a.noise_sigma,
        seed: a.noise_seed.unwrap_or(0),
        force_noise_enabled: !a.no_force_noise,
    });
    let config = SimConfig {
        dt: 1.0 / input.rate_hz,
        noise,
        env,
        contact_law: if a.linear_contact { ContactLaw::Linear } else { ContactLaw::Unilateral },
        ..SimConfig::default()
    };
    let mut record = simulate(&model, &input, &config)?;
    record.session_id = a.session_id.clone().unwrap_or_else(|| "synthetic".into());
    let out = out_path(&a.out)?;
    ensure_parent(out)?;
    save_session(out, &record)?;
    let mut outputs = vec![out.to_path_buf()];
    if a.csv {
        let csv = csv_path(out);
        export_session_csv(&csv, &record)?;
        outputs.push(csv);
    }
    tracing::info!(rows = record.len(), path = %out.display(), "session written");
    Ok(outputs)
}

fn non_convergence(what: &str, fits: &[AxisFit], all_present: bool) -> Result<()> {
    let failed: Vec<String> = fits.iter().filter(|f| !f.converged).map(|f| format!("axis {} ({:?})", f.axis, f.termination)).collect();
    if failed.is_empty() && all_present {
        Ok(())
    } else {
        Err(LabError::NonConvergence(format!("{what}: {}", if failed.is_empty() { "missing fits".into() } else { failed.join(", ") })))
    }
}

/// Runs the identification described by `a` on a loaded session.
pub fn identify(record: &follower_lab_core::SessionRecord, a: &IdentifyArgs) -> Result<IdentifyReport> {
    let init = a.fit.init()?;
    let opts = a.fit.options()?;
    let fits = fit_axes(record, &init, &opts)?;
    let axis_fits: Vec<AxisFit> = fits.iter().enumerate().filter_map(|(i, f)| AxisFit::from_fit(i, f)).collect();
    let mut report = IdentifyReport {
        session_id: record.session_id.clone(),
        method: a.method,
        converged: fits.iter().all(|f| f.converged),
        fits: axis_fits,
        unstructured: None,
        coupling: None,
        time_invariance: None,
    };
    match a.method {
        Method::Structured => {}
        Method::Unstructured => {
            let blocks = report
                .fits
                .iter()
                .map(|f| build_state_space(&f.params, &EnvParams::free_space()))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let init_model = block_diagonal(&blocks)?;
            let u_opts = FitOptions { regularization_weight: FitOptions::unstructured().regularization_weight, ..opts };
            let fit = fit_unstructured(record, &init_model, &u_opts)?;
            report.converged &= fit.converged;
            report.coupling = Some(coupling_report(&fit, &init_model.mask)?);
            report.unstructured = Some(fit);
        }
        Method::Segments => {
            let seg = segment_analysis(record, a.segments, &vec![init; record.n_channels()], &opts)?;
            report.converged &= seg.fits.iter().flatten().all(|f| f.converged);
            let max_abs_change_percent = seg
                .stiffness_change_percent
                .iter()
                .chain(&seg.damping_change_percent)
                .flatten()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            report.time_invariance = Some(TimeInvariance {
                n_segments: seg.n_segments,
                stiffness_change_percent: seg.stiffness_change_percent,
                damping_change_percent: seg.damping_change_percent,
                first_model_rms_delta: seg.first_model_rms_delta,
                max_abs_change_percent,
            });
        }
    }
    Ok(report)
}

fn cmd_identify(a: &IdentifyArgs) -> Result<(Vec<PathBuf>, Result<()>)> {
    let record = load_session(&a.session)?;
    let report = identify(&record, a)?;
    let out = out_path(&a.out)?;
    ensure_parent(out)?;
    write_json(out, &report)?;
    let outcome = if report.converged {
        non_convergence("identify", &report.fits, report.fits.len() == record.n_channels())
    } else {
        Err(LabError::NonConvergence(format!("identify: {} did not converge", record.session_id)))
    };
    Ok((vec![out.to_path_buf()], outcome))
}

fn analyze_options(toggles: &AnalysisToggles, fit: &FitArgs) -> Result<AnalyzeOptions> {
    Ok(AnalyzeOptions {
        spectra: !toggles.no_spectra,
        coherence: !toggles.no_coherence,
        nyquist: !toggles.no_nyquist,
        energy: !toggles.no_energy,
        residuals: !toggles.no_residuals,
        path: !toggles.no_path,
        coupling: toggles.coupling,
        segments: toggles.segments,
        fit: fit.options()?,
        init: fit.init()?,
        baseline_seed: toggles.baseline_seed,
        ..AnalyzeOptions::default()
    })
}

/// Structured fits started from a previous identification, or `None` to
/// let the analysis fit from the generic initial guess.
fn seeded_fits(
    record: &follower_lab_core::SessionRecord,
    fit_file: Option<&Path>,
    opts: &FitOptions,
) -> Result<(Option<Vec<FitResult>>, Option<IdentifyReport>)> {
    let Some(path) = fit_file else {
        return Ok((None, None));
    };
    let prior: IdentifyReport = read_json(path)?;
    if prior.fits.len() != record.n_channels() {
        return Err(validation(format!(
            "{} has {} axis fits; the session has {} channels",
            path.display(),
            prior.fits.len(),
            record.n_channels()
        )));
    }
    let fits = prior
        .fits
        .iter()
        .map(|f| Ok(follower_lab_core::sysid::fit_structured(record, f.axis, &f.params, opts)?))
        .collect::<Result<Vec<_>>>()?;
    Ok((Some(fits), Some(prior)))
}

fn cmd_analyze(a: &AnalyzeArgs) -> Result<(Vec<PathBuf>, Result<()>)> {
    let record = load_session(&a.session)?;
    let opts = analyze_options(&a.toggles, &a.fit)?;
    let (fits, _) = seeded_fits(&record, a.fit_file.as_deref(), &opts.fit)?;
    let (report, figures) = analyze(&record, fits, &opts)?;
    let out = out_path(&a.out)?;
    ensure_parent(out)?;
    crate::report::write_report(out, &report)?;
    let mut outputs = vec![out.to_path_buf()];
    if let Some(dir) = &a.figures_dir {
        outputs.extend(write_figures(dir, &figures)?);
    }
    let outcome = non_convergence("analyze", &report.fits, report.converged && report.fits.len() == record.n_channels());
    Ok((outputs, outcome))
}

fn cmd_report(a: &ReportArgs) -> Result<(Vec<PathBuf>, Result<()>)> {
    let record = load_session(&a.session)?;
    let toggles = AnalysisToggles {
        no_spectra: false,
        no_coherence: false,
        no_nyquist: false,
        no_energy: false,
        no_residuals: false,
        no_path: false,
        coupling: a.coupling,
        segments: a.segments,
        baseline_seed: a.baseline_seed.unwrap_or(0),
    };
    let opts = analyze_options(&toggles, &a.fit)?;
    let (fits, prior) = seeded_fits(&record, a.fit_file.as_deref(), &opts.fit)?;
    let (report, figures) = analyze(&record, fits, &opts)?;
    let dir = a.out_dir.as_deref().ok_or_else(|| validation("output directory not resolved"))?;
    let figure_files = write_figures(dir, &figures)?;
    let written: Vec<String> = FIGURE_FAMILIES
        .iter()
        .filter(|f| figure_files.iter().any(|p| p.file_stem().is_some_and(|s| s == **f)))
        .map(|f| f.to_string())
        .collect();
    let merged = MergedReport {
        analysis: report,
        identification: prior,
        figure_families: written.clone(),
        figure_files: figure_files.iter().filter_map(|p| p.file_name().map(PathBuf::from)).collect(),
    };
    let out = dir.join(REPORT_EXTENSION);
    write_json(&out, &merged)?;
    let mut outputs = vec![out];
    outputs.extend(figure_files);
    let converged = merged.analysis.converged && merged.analysis.fits.len() == record.n_channels();
    let outcome = if written.len() < FIGURE_FAMILIES.len() {
        Err(validation(format!("only {} of {} figure families could be produced", written.len(), FIGURE_FAMILIES.len())))
    } else {
        non_convergence("report", &merged.analysis.fits, converged)
    };
    Ok((outputs, outcome))
}

fn cmd_serve(a: &ServeArgs) -> Result<()> {
    let data_dir = a.data_dir.clone().ok_or_else(|| validation("data directory not resolved"))?;
    let config = CaptureConfig {
        data_dir: data_dir.clone(),
        sample_timeout: std::time::Duration::from_secs_f64(a.sample_timeout),
        speed: a.speed,
    };
    let addr = format!("{}:{}", a.bind, a.port);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| LabError::io(&data_dir, e))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|e| LabError::io(&addr, e))?;
        tracing::info!(%addr, dir = %data_dir.display(), "capture service listening");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        capture::serve(listener, config, shutdown).await.map_err(|e| LabError::io(&data_dir, e))
    })
}

//! Session analysis: the `.report.json` AnalysisReport and the five figure
//! families (spectra, coherence, Nyquist, energy, residual histogram), each
//! emitted as CSV and SVG.

use std::path::{Path, PathBuf};

use follower_lab_core::analysis::{
    compare_spectra, gaussian_baseline, nyquist_curve, passivity_crossing, path_length, record_energy,
    residual_stats, spectral_xcorr, time_xcorr, coherence, CoherenceResult, EnergySeries, EnergyVariant,
    SpectrumResult, WelchOptions, DEFAULT_BINS,
};
use follower_lab_core::sysid::{
    coupling_report, fit_structured, fit_unstructured, segment_analysis, CouplingReport, FitOptions, FitResult,
    FittedModel, Termination,
};
use follower_lab_core::trajectory::Provenance;
use follower_lab_core::{block_diagonal, build_state_space, EnvParams, FollowerParams, SessionRecord, Trajectory};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::session::{write_atomically, write_csv};
use crate::svg::{Plot, Scale, Series};

/// Bins whose Welch input power exceeds this fraction of the peak count as
/// in band.
pub const IN_BAND_POWER_FRACTION: f64 = 0.01;
/// Monte Carlo trials for the same-distribution distance baseline.
pub const BASELINE_TRIALS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzeOptions {
    pub spectra: bool,
    pub coherence: bool,
    pub nyquist: bool,
    pub energy: bool,
    pub residuals: bool,
    pub path: bool,
    /// Unstructured fit and coupling statistics (slow for many axes).
    pub coupling: bool,
    /// Number of equal segments for the time-invariance check; 0 or 1 skips it.
    pub segments: usize,
    pub welch: WelchOptions,
    pub fit: FitOptions,
    /// Initial guess applied to every axis.
    pub init: FollowerParams,
    pub baseline_seed: u64,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self {
            spectra: true,
            coherence: true,
            nyquist: true,
            energy: true,
            residuals: true,
            path: true,
            coupling: false,
            segments: 0,
            welch: WelchOptions::default(),
            fit: FitOptions::default(),
            init: default_init(),
            baseline_seed: 0,
        }
    }
}

pub fn default_init() -> FollowerParams {
    FollowerParams { mass: 1.0, damping: 10.0, stiffness: 100.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisFit {
    pub axis: usize,
    pub params: FollowerParams,
    pub stiffness_per_mass: f64,
    pub damping_per_mass: f64,
    pub rms_percent_error: f64,
    pub converged: bool,
    pub termination: Termination,
    pub iterations: usize,
    pub final_cost: f64,
}

impl AxisFit {
    pub fn from_fit(axis: usize, fit: &FitResult) -> Option<Self> {
        let params = *fit.params()?;
        Some(Self {
            axis,
            params,
            stiffness_per_mass: params.stiffness_per_mass(),
            damping_per_mass: params.damping_per_mass(),
            rms_percent_error: fit.rms_percent_error.first().copied().unwrap_or(f64::NAN),
            converged: fit.converged,
            termination: fit.termination,
            iterations: fit.iterations,
            final_cost: fit.final_cost,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisLinearity {
    pub axis: usize,
    pub spectral_xcorr: f64,
    pub time_xcorr: f64,
    pub coherence_in_band_mean: Option<f64>,
    pub coherence_in_band_min: Option<f64>,
    pub in_band_bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeInvariance {
    pub n_segments: usize,
    pub stiffness_change_percent: Vec<Vec<f64>>,
    pub damping_change_percent: Vec<Vec<f64>>,
    pub first_model_rms_delta: Vec<Vec<f64>>,
    pub max_abs_change_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySummary {
    pub variant: EnergyVariant,
    /// Smallest energy after the first input period.
    pub min_after_period: Option<f64>,
    pub final_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passivity {
    /// Passivity crossing of each fitted axis in Hz; `None` when the Nyquist
    /// curve never leaves the right half plane.
    pub crossing_hz: Vec<Option<f64>>,
    pub input_period_s: f64,
    pub energy: Vec<EnergySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub n: usize,
    pub mean: f64,
    pub sigma: f64,
    pub bhattacharyya: f64,
    pub baseline_bhattacharyya: f64,
    pub baseline_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathLengths {
    pub input_m: f64,
    pub output_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub session_id: String,
    pub duration_s: f64,
    pub rate_hz: f64,
    pub fits: Vec<AxisFit>,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<CouplingReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linearity: Option<Vec<AxisLinearity>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_invariance: Option<TimeInvariance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passivity: Option<Passivity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residuals: Option<ResidualSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_lengths: Option<PathLengths>,
}

/// Figure data behind a report.
#[derive(Debug, Clone, Default)]
pub struct Figures {
    pub spectra: Vec<SpectrumResult>,
    pub coherence: Vec<CoherenceResult>,
    pub nyquist: Option<NyquistFigure>,
    pub energy: Vec<EnergySeries>,
    pub residual_histogram: Option<HistogramFigure>,
}

#[derive(Debug, Clone)]
pub struct NyquistFigure {
    pub omega_rad_s: Vec<f64>,
    /// `(re, im)` per fitted axis.
    pub curves: Vec<(Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone)]
pub struct HistogramFigure {
    pub centers: Vec<f64>,
    pub observed: Vec<f64>,
    pub gaussian: Vec<f64>,
}

/// Fits every channel with the structured model from `init`.
pub fn fit_axes(record: &SessionRecord, init: &FollowerParams, opts: &FitOptions) -> Result<Vec<FitResult>> {
    (0..record.n_channels()).map(|axis| Ok(fit_structured(record, axis, init, opts)?)).collect()
}

/// Characteristic period of the input: the slowest Fourier component, or
/// the band edge of a filtered-noise input.
pub fn input_period_s(provenance: &Provenance, fallback: f64) -> f64 {
    match provenance {
        Provenance::Fourier { spec } => {
            let slowest = spec.axes.iter().flatten().map(|c| c.frequency_hz).filter(|f| *f > 0.0).fold(f64::INFINITY, f64::min);
            if slowest.is_finite() { 1.0 / slowest } else { fallback }
        }
        Provenance::FilteredNoise { spec } | Provenance::OrientationNoise { spec } => 1.0 / spec.cutoff_hz,
        Provenance::SingleAxis { source, .. } | Provenance::Delayed { source, .. } => input_period_s(source, fallback),
        Provenance::Composite { parts } => {
            parts.iter().map(|p| input_period_s(p, fallback)).fold(0.0, f64::max).max(f64::MIN_POSITIVE)
        }
        Provenance::Captured | Provenance::External => fallback,
    }
}

fn output_trajectory(record: &SessionRecord) -> Trajectory {
    let np = record.axes.positions;
    Trajectory {
        rate_hz: record.rate_hz,
        t: record.output.t.clone(),
        pos: record.output.pos[..np].to_vec(),
        vel: record.output.vel[..np].to_vec(),
        rot: vec![],
        ang_vel: vec![],
        provenance: Provenance::External,
    }
}

/// Log-spaced grid of `n` frequencies (rad/s) over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1).max(1) as f64)).collect()
}

/// Runs the configured analyses. `fits` are reused when given (one per
/// channel), otherwise every channel is fitted from `opts.init`.
pub fn analyze(record: &SessionRecord, fits: Option<Vec<FitResult>>, opts: &AnalyzeOptions) -> Result<(AnalysisReport, Figures)> {
    record.validate()?;
    let k = record.n_channels();
    let fits = match fits {
        Some(f) => f,
        None => fit_axes(record, &opts.init, &opts.fit)?,
    };
    let axis_fits: Vec<AxisFit> = fits.iter().enumerate().filter_map(|(a, f)| AxisFit::from_fit(a, f)).collect();
    let converged = fits.iter().all(|f| f.converged);
    let mut figures = Figures::default();

    let mut linearity = None;
    if opts.spectra || opts.coherence {
        let mut rows = Vec::with_capacity(k);
        for axis in 0..k {
            let u = record.input.channel(axis).0;
            let y = &record.output.pos[axis];
            let spectra = compare_spectra(u, y, record.rate_hz)?;
            let coh = coherence(u, y, record.rate_hz, &opts.welch)?;
            let band = coh.in_band(IN_BAND_POWER_FRACTION);
            let values: Vec<f64> = band.iter().map(|&b| coh.msc[b]).collect();
            rows.push(AxisLinearity {
                axis,
                spectral_xcorr: spectral_xcorr(u, y, record.rate_hz)?,
                time_xcorr: time_xcorr(u, y)?,
                coherence_in_band_mean: (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64),
                coherence_in_band_min: values.iter().copied().reduce(f64::min),
                in_band_bins: values.len(),
            });
            if opts.spectra {
                figures.spectra.push(spectra);
            }
            if opts.coherence {
                figures.coherence.push(coh);
            }
        }
        linearity = Some(rows);
    }

    let mut passivity = None;
    if opts.nyquist || opts.energy {
        let period = input_period_s(&record.input.provenance, record.len() as f64 / record.rate_hz / 4.0);
        let mut energy = Vec::new();
        if opts.energy {
            let from = (period * record.rate_hz).ceil() as usize;
            for variant in [EnergyVariant::Velocity, EnergyVariant::Force] {
                let series = record_energy(record, variant)?;
                energy.push(EnergySummary {
                    variant,
                    min_after_period: series.min_from(from),
                    final_energy: series.energy.last().copied().unwrap_or(0.0),
                });
                figures.energy.push(series);
            }
        }
        if opts.nyquist {
            let omega = log_grid(1e-2, 1e3, 600);
            let curves = axis_fits
                .iter()
                .map(|f| {
                    let g = nyquist_curve(&f.params, &omega);
                    (g.iter().map(|z| z.re).collect(), g.iter().map(|z| z.im).collect())
                })
                .collect();
            figures.nyquist = Some(NyquistFigure { omega_rad_s: omega, curves });
        }
        passivity = Some(Passivity {
            crossing_hz: axis_fits.iter().map(|f| passivity_crossing(&f.params)).collect(),
            input_period_s: period,
            energy,
        });
    }

    let mut residuals = None;
    if opts.residuals && !fits.is_empty() {
        let measured: Vec<Vec<f64>> = (0..fits.len()).map(|a| record.output.pos[a].clone()).collect();
        let predicted: Vec<Vec<f64>> = fits.iter().map(|f| f.predicted.first().cloned().unwrap_or_default()).collect();
        let stats = residual_stats(&measured, &predicted, DEFAULT_BINS)?;
        let baseline = gaussian_baseline(stats.n, DEFAULT_BINS, BASELINE_TRIALS, opts.baseline_seed)?;
        figures.residual_histogram = Some(HistogramFigure {
            centers: stats.bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect(),
            observed: stats.histogram.clone(),
            gaussian: stats.gaussian.clone(),
        });
        residuals = Some(ResidualSummary {
            n: stats.n,
            mean: stats.mean,
            sigma: stats.sigma,
            bhattacharyya: stats.bhattacharyya,
            baseline_bhattacharyya: baseline,
            baseline_ratio: stats.bhattacharyya / baseline,
        });
    }

    let path_lengths = opts.path.then(|| PathLengths {
        input_m: path_length(&record.input),
        output_m: path_length(&output_trajectory(record)),
    });

    let time_invariance = if opts.segments > 1 {
        let init = vec![opts.init; k];
        let seg = segment_analysis(record, opts.segments, &init, &opts.fit)?;
        let max_abs_change_percent = seg
            .stiffness_change_percent
            .iter()
            .chain(&seg.damping_change_percent)
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        Some(TimeInvariance {
            n_segments: seg.n_segments,
            stiffness_change_percent: seg.stiffness_change_percent,
            damping_change_percent: seg.damping_change_percent,
            first_model_rms_delta: seg.first_model_rms_delta,
            max_abs_change_percent,
        })
    } else {
        None
    };

    let coupling = if opts.coupling { Some(coupling_from_structured(record, &axis_fits, &opts.fit)?) } else { None };

    let report = AnalysisReport {
        session_id: record.session_id.clone(),
        duration_s: record.len() as f64 / record.rate_hz,
        rate_hz: record.rate_hz,
        fits: axis_fits,
        converged,
        coupling,
        linearity,
        time_invariance,
        passivity,
        residuals,
        path_lengths,
    };
    Ok((report, figures))
}

/// Unstructured fit started from the block-diagonal composition of the
/// structured fits, summarized by the block-diagonal mask.
pub fn coupling_from_structured(record: &SessionRecord, fits: &[AxisFit], opts: &FitOptions) -> Result<CouplingReport> {
    let blocks = fits
        .iter()
        .map(|f| build_state_space(&f.params, &EnvParams::free_space()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let init = block_diagonal(&blocks)?;
    let fit_opts = FitOptions { regularization_weight: opts.regularization_weight.max(FitOptions::unstructured().regularization_weight), ..opts.clone() };
    let fit = fit_unstructured(record, &init, &fit_opts)?;
    if let FittedModel::Unstructured { .. } = &fit.model {
        Ok(coupling_report(&fit, &init.mask)?)
    } else {
        Err(LabError::Validation("unstructured fit returned a structured model".into()))
    }
}

pub fn write_report(path: &Path, report: &AnalysisReport) -> Result<()> {
    write_atomically(path, |out| {
        serde_json::to_writer_pretty(&mut *out, report)?;
        std::io::Write::write_all(out, b"\n")
    })
}

pub fn read_report(path: &Path) -> Result<AnalysisReport> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| LabError::parse(path, e.line(), e.to_string()))
}

/// Figure family names, in the order they are written.
pub const FIGURE_FAMILIES: [&str; 5] = ["spectra", "coherence", "nyquist", "energy", "residual_histogram"];

/// Writes `<family>.csv` and `<family>.svg` for every family with data and
/// returns the written paths.
pub fn write_figures(dir: &Path, figures: &Figures) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let mut written = Vec::new();
    let mut emit = |name: &str, columns: Vec<String>, cols: Vec<&[f64]>, plot: Plot| -> Result<()> {
        let csv = dir.join(format!("{name}.csv"));
        let rows = cols.first().map_or(0, |c| c.len());
        write_csv(&csv, &columns, rows, |i, row| row.extend(cols.iter().map(|c| c.get(i).copied().unwrap_or(f64::NAN))))?;
        let svg = dir.join(format!("{name}.svg"));
        let text = plot.render();
        write_atomically(&svg, |out| std::io::Write::write_all(out, text.as_bytes()))?;
        written.push(csv);
        written.push(svg);
        Ok(())
    };

    if let Some(first) = figures.spectra.first() {
        let mut columns = vec!["freq_hz".to_string()];
        let mut cols: Vec<&[f64]> = vec![&first.freq_hz];
        let mut series = Vec::new();
        for (a, s) in figures.spectra.iter().enumerate() {
            columns.push(format!("input_{a}"));
            columns.push(format!("output_{a}"));
            cols.push(&s.input);
            cols.push(&s.output);
            series.push(Series { label: format!("input {a}"), x: &s.freq_hz, y: &s.input });
            series.push(Series { label: format!("output {a}"), x: &s.freq_hz, y: &s.output });
        }
        emit("spectra", columns, cols, Plot { title: "Amplitude spectra", x_label: "frequency (Hz)", y_label: "amplitude", x_scale: Scale::Linear, series })?;
    }
    if let Some(first) = figures.coherence.first() {
        let mut columns = vec!["freq_hz".to_string()];
        let mut cols: Vec<&[f64]> = vec![&first.freq_hz];
        let mut series = Vec::new();
        for (a, c) in figures.coherence.iter().enumerate() {
            columns.push(format!("msc_{a}"));
            cols.push(&c.msc);
            series.push(Series { label: format!("axis {a}"), x: &c.freq_hz, y: &c.msc });
        }
        emit("coherence", columns, cols, Plot { title: "Magnitude-squared coherence", x_label: "frequency (Hz)", y_label: "coherence", x_scale: Scale::Linear, series })?;
    }
    if let Some(ny) = &figures.nyquist {
        let mut columns = vec!["omega_rad_s".to_string()];
        let mut cols: Vec<&[f64]> = vec![&ny.omega_rad_s];
        let mut series = Vec::new();
        for (a, (re, im)) in ny.curves.iter().enumerate() {
            columns.push(format!("re_{a}"));
            columns.push(format!("im_{a}"));
            cols.push(re);
            cols.push(im);
            series.push(Series { label: format!("axis {a}"), x: re, y: im });
        }
        emit("nyquist", columns, cols, Plot { title: "Nyquist curve of the fitted follower", x_label: "Re G", y_label: "Im G", x_scale: Scale::Linear, series })?;
    }
    if let Some(first) = figures.energy.first() {
        let mut columns = vec!["t".to_string()];
        let mut cols: Vec<&[f64]> = vec![&first.t];
        let mut series = Vec::new();
        for e in &figures.energy {
            let name = match e.variant {
                EnergyVariant::Velocity => "velocity",
                EnergyVariant::Force => "force",
            };
            columns.push(format!("energy_{name}"));
            cols.push(&e.energy);
            series.push(Series { label: name.to_string(), x: &e.t, y: &e.energy });
        }
        emit("energy", columns, cols, Plot { title: "Cumulative energy", x_label: "time (s)", y_label: "energy", x_scale: Scale::Linear, series })?;
    }
    if let Some(h) = &figures.residual_histogram {
        let series = vec![
            Series { label: "residuals".into(), x: &h.centers, y: &h.observed },
            Series { label: "fitted Gaussian".into(), x: &h.centers, y: &h.gaussian },
        ];
        emit(
            "residual_histogram",
            vec!["bin_center_m".into(), "observed".into(), "gaussian".into()],
            vec![&h.centers, &h.observed, &h.gaussian],
            Plot { title: "Residual distribution", x_label: "residual (m)", y_label: "probability", x_scale: Scale::Linear, series },
        )?;
    }
    Ok(written)
}

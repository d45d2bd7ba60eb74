//! Grey-box identification of follower dynamics from recorded sessions.
//!
//! Fits minimize the mean squared output error of the noise-free simulator
//! plus an L2 penalty toward the initial guess. The minimizer is
//! Gauss-Newton with adaptive Levenberg damping: damping grows after a
//! rejected step and shrinks after an accepted one.
//!
//! The position response depends only on `k/m` and `b/m`, so structured fits
//! hold the mass at its initial value unless [`FitOptions::fix_mass`] is
//! cleared.

mod coupling;
mod segments;
mod solver;
mod structured;
mod unstructured;

#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{FollowerParams, StateSpaceModel};
use crate::record::SessionRecord;

pub use coupling::{coupling_report, coupling_stats, CouplingReport, MatrixCoupling};
pub use segments::{segment_analysis, SegmentAnalysis};
pub use solver::Termination;
pub use structured::{fit_all_axes, fit_structured, predict_position};
pub use unstructured::fit_unstructured;

/// Initial state used when simulating candidate models against a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitInitialState {
    /// First measured output position and velocity.
    #[default]
    Measured,
    /// First input position with zero velocity.
    InputAligned,
}

/// Which entries an unstructured fit may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnstructuredGauge {
    /// Every entry of `A`, `B` and the fitted rows of `C`.
    #[default]
    Free,
    /// Only the velocity rows of `A` and `B`; position rows and `C` keep
    /// their initial values.
    Physical,
}

/// Regularization used for unstructured fits unless overridden. Pulls the
/// directions the data cannot see back toward the initial model.
pub const UNSTRUCTURED_REGULARIZATION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Stop when every Jacobian column is this close to orthogonal to the
    /// residual (cosine of the angle).
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    /// Stop when an iteration lowers the cost by less than this fraction.
    pub cost_tolerance: f64,
    /// λ_r: weight of the L2 pull toward the initial guess.
    pub regularization_weight: f64,
    /// λ_s: weight of the eigenvalue penalty in unstructured fits.
    pub stability_penalty_weight: f64,
    /// ε: required distance of every eigenvalue from the imaginary axis.
    pub stability_margin: f64,
    pub fd_relative_step: f64,
    /// Weight of the force rows; zero fits position only.
    pub force_weight: f64,
    pub fix_mass: bool,
    pub initial_damping: f64,
    pub max_damping: f64,
    pub initial_state: FitInitialState,
    pub unstructured_gauge: UnstructuredGauge,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            gradient_tolerance: 1e-8,
            step_tolerance: 1e-10,
            cost_tolerance: 1e-12,
            regularization_weight: 1e-12,
            stability_penalty_weight: 1.0,
            stability_margin: 1e-3,
            fd_relative_step: 1e-6,
            force_weight: 0.0,
            fix_mass: true,
            initial_damping: 1e-3,
            max_damping: 1e12,
            initial_state: FitInitialState::Measured,
            unstructured_gauge: UnstructuredGauge::Free,
        }
    }
}

impl FitOptions {
    /// Defaults with [`UNSTRUCTURED_REGULARIZATION`].
    pub fn unstructured() -> Self {
        Self { regularization_weight: UNSTRUCTURED_REGULARIZATION, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("regularization_weight", self.regularization_weight),
            ("stability_penalty_weight", self.stability_penalty_weight),
            ("stability_margin", self.stability_margin),
            ("force_weight", self.force_weight),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        for (name, v) in [
            ("gradient_tolerance", self.gradient_tolerance),
            ("step_tolerance", self.step_tolerance),
            ("cost_tolerance", self.cost_tolerance),
            ("fd_relative_step", self.fd_relative_step),
            ("initial_damping", self.initial_damping),
            ("max_damping", self.max_damping),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    Structured { axis: usize, params: FollowerParams },
    Unstructured {
        model: StateSpaceModel,
        /// Rows of `C` that entered the cost.
        output_rows: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: FittedModel,
    /// One entry per fitted axis.
    pub rms_percent_error: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
    pub final_cost: f64,
    pub cost_history: Vec<f64>,
    /// Measured minus predicted position, per fitted axis.
    #[serde(skip)]
    pub residuals: Vec<Vec<f64>>,
    #[serde(skip)]
    pub predicted: Vec<Vec<f64>>,
}

impl FitResult {
    pub fn params(&self) -> Option<&FollowerParams> {
        match &self.model {
            FittedModel::Structured { params, .. } => Some(params),
            FittedModel::Unstructured { .. } => None,
        }
    }
}

/// `100 · RMS(measured − predicted) / RMS(measured − mean(measured))`.
pub fn rms_percent_error(measured: &[f64], predicted: &[f64]) -> Result<f64> {
    if measured.len() != predicted.len() {
        return Err(Error::DimensionMismatch(format!(
            "measured has {} samples, predicted {}",
            measured.len(),
            predicted.len()
        )));
    }
    if measured.is_empty() {
        return Err(Error::Empty("rms_percent_error needs samples"));
    }
    let n = measured.len() as f64;
    let mean = measured.iter().sum::<f64>() / n;
    let spread = measured.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>();
    if spread == 0.0 {
        return Err(Error::Degenerate("measured signal is constant".into()));
    }
    let err = measured.iter().zip(predicted).map(|(m, p)| (m - p) * (m - p)).sum::<f64>();
    Ok(100.0 * (err / spread).sqrt())
}

pub(crate) fn check_record(record: &SessionRecord, min_seconds: f64) -> Result<()> {
    let n = record.len();
    let required = (min_seconds * record.rate_hz).ceil() as usize;
    if n < required {
        return Err(Error::TooShort { required, actual: n });
    }
    if record.input.len() != n {
        return Err(Error::DimensionMismatch("input and output lengths differ".into()));
    }
    Ok(())
}

/// Minimum record length accepted by the fitters.
pub const MIN_FIT_SECONDS: f64 = 10.0;

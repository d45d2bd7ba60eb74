//! Session records: paired input/output data, the unit of persistence and analysis.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{EnvParams, SimConfig, StateSpaceModel};
use crate::trajectory::Trajectory;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Synthetic,
    HumanCapture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxesDescriptor {
    pub positions: usize,
    pub rotations: usize,
}

impl AxesDescriptor {
    pub fn channels(&self) -> usize {
        self.positions + self.rotations
    }
}

/// Measured follower output, one vector per channel (positions, then rotations).
///
/// `force` is the force the follower exerts along each axis, so pressing
/// down into a surface below gives a negative value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSamples {
    pub t: Vec<f64>,
    pub pos: Vec<Vec<f64>>,
    pub vel: Vec<Vec<f64>>,
    pub force: Vec<Vec<f64>>,
}

impl OutputSamples {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Ground truth kept alongside synthetic sessions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub model: StateSpaceModel,
    pub config: SimConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub schema_version: u32,
    pub rate_hz: f64,
    pub axes: AxesDescriptor,
    pub input: Trajectory,
    pub output: OutputSamples,
    pub env: EnvParams,
    pub source: Source,
    #[serde(default)]
    pub notes: String,
    #[serde(default)]
    pub aborted: bool,
    #[serde(default)]
    pub synthetic: Option<SyntheticTruth>,
}

impl SessionRecord {
    pub fn len(&self) -> usize {
        self.output.len()
    }

    pub fn is_empty(&self) -> bool {
        self.output.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate_hz
    }

    pub fn n_channels(&self) -> usize {
        self.axes.channels()
    }

    /// Structural and numeric validation. Errors name the first offending
    /// sample row and field.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        if !(self.rate_hz > 0.0) || !self.rate_hz.is_finite() {
            return Err(invalid("rate_hz", "must be positive"));
        }
        let k = self.n_channels();
        let n = self.input.len();
        if self.input.n_positions() != self.axes.positions || self.input.n_rotations() != self.axes.rotations {
            return Err(Error::DimensionMismatch("input channels differ from axes descriptor".into()));
        }
        if self.output.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "input has {n} samples, output has {}",
                self.output.len()
            )));
        }
        for (name, series) in [("y_pos", &self.output.pos), ("y_vel", &self.output.vel), ("f", &self.output.force)] {
            if series.len() != k || series.iter().any(|s| s.len() != n) {
                return Err(Error::DimensionMismatch(format!("{name} must hold {k} channels of {n} samples")));
            }
        }
        for row in 0..n {
            let check = |field: &'static str, v: f64| -> Result<()> {
                if v.is_finite() {
                    Ok(())
                } else {
                    Err(invalid("sample", format!("row {row}: field `{field}` is not finite ({v})")))
                }
            };
            check("t", self.output.t[row])?;
            for c in 0..k {
                let (up, uv) = self.input.channel(c);
                check("u_pos", up[row])?;
                check("u_vel", uv[row])?;
                check("y_pos", self.output.pos[c][row])?;
                check("y_vel", self.output.vel[c][row])?;
                check("f", self.output.force[c][row])?;
            }
            if row > 0 && self.output.t[row] <= self.output.t[row - 1] {
                return Err(invalid("sample", format!("row {row}: timestamps are not increasing")));
            }
        }
        if n > 0 && (self.input.t[0] - self.output.t[0]).abs() > 0.5 / self.rate_hz {
            return Err(invalid("t", "input and output do not start together"));
        }
        Ok(())
    }

    /// Samples `[start, end)` as a new record with time re-based to zero.
    pub fn slice(&self, start: usize, end: usize) -> SessionRecord {
        let cut = |v: &Vec<Vec<f64>>| v.iter().map(|c| c[start..end].to_vec()).collect();
        let input = self.input.slice(start, end);
        SessionRecord {
            session_id: self.session_id.clone(),
            schema_version: self.schema_version,
            rate_hz: self.rate_hz,
            axes: self.axes,
            output: OutputSamples {
                t: input.t.clone(),
                pos: cut(&self.output.pos),
                vel: cut(&self.output.vel),
                force: cut(&self.output.force),
            },
            input,
            env: self.env,
            source: self.source,
            notes: self.notes.clone(),
            aborted: self.aborted,
            synthetic: self.synthetic.clone(),
        }
    }
}

//! Resampling of jittered streams onto a common uniform grid.

use follower_lab_core::trajectory::{central_difference, uniform_timestamps, Provenance};
use follower_lab_core::Trajectory;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Gaps longer than this many nominal periods are refused.
pub const MAX_GAP_PERIODS: f64 = 5.0;

/// Timestamped samples, one vector per channel (positions, then rotations).
/// Velocities are optional; when absent they are differentiated after
/// resampling.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimedSamples {
    pub t: Vec<f64>,
    pub pos: Vec<Vec<f64>>,
    #[serde(default)]
    pub vel: Option<Vec<Vec<f64>>>,
}

impl TimedSamples {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn from_trajectory(traj: &Trajectory) -> Self {
        let n = traj.n_channels();
        let (pos, vel) = (0..n).map(|c| traj.channel(c)).map(|(p, v)| (p.to_vec(), v.to_vec())).unzip();
        Self { t: traj.t.clone(), pos, vel: Some(vel) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aligned {
    /// Resampled input; its first `positions` channels are positions.
    pub input: Trajectory,
    pub t: Vec<f64>,
    pub pos: Vec<Vec<f64>>,
    pub vel: Vec<Vec<f64>>,
    /// Largest spacing between the two samples bracketing any grid point.
    pub max_gap_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gap {
    pub start_s: f64,
    pub end_s: f64,
}

fn check_stream(name: &str, s: &TimedSamples) -> Result<()> {
    if s.len() < 2 {
        return Err(LabError::Validation(format!("{name}: need at least two samples, got {}", s.len())));
    }
    for (c, ch) in s.pos.iter().chain(s.vel.iter().flatten()).enumerate() {
        if ch.len() != s.len() {
            return Err(LabError::Validation(format!("{name}: channel {c} has {} samples, expected {}", ch.len(), s.len())));
        }
    }
    if let Some(i) = s.t.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(LabError::Validation(format!("{name}: timestamps not increasing at sample {}", i + 1)));
    }
    if s.t.iter().any(|t| !t.is_finite()) {
        return Err(LabError::Validation(format!("{name}: non-finite timestamp")));
    }
    Ok(())
}

fn gaps(t: &[f64], limit: f64) -> Vec<Gap> {
    t.windows(2)
        .filter(|w| w[1] - w[0] > limit)
        .map(|w| Gap { start_s: w[0], end_s: w[1] })
        .collect()
}

/// Linear interpolation of `x(t)` at the increasing `grid`; also returns the
/// widest bracketing interval used.
fn interpolate(t: &[f64], x: &[f64], grid: &[f64]) -> (Vec<f64>, f64) {
    let mut j = 0;
    let mut widest: f64 = 0.0;
    let values = grid
        .iter()
        .map(|&g| {
            while j + 2 < t.len() && t[j + 1] < g {
                j += 1;
            }
            let (t0, t1) = (t[j], t[j + 1]);
            if g == t0 {
                return x[j];
            }
            if g == t1 {
                return x[j + 1];
            }
            widest = widest.max(t1 - t0);
            let w = (g - t0) / (t1 - t0);
            x[j] + w * (x[j + 1] - x[j])
        })
        .collect();
    (values, widest)
}

/// Resamples input `u` and output `y` onto `t0 + k / rate` over their common
/// span, `t0` being the later of the two start times.
pub fn resample_align(u: &TimedSamples, y: &TimedSamples, rate_hz: f64, positions: usize) -> Result<Aligned> {
    if !(rate_hz > 0.0) || !rate_hz.is_finite() {
        return Err(LabError::Validation(format!("rate must be positive, got {rate_hz}")));
    }
    check_stream("input", u)?;
    check_stream("output", y)?;
    if u.pos.len() != y.pos.len() {
        return Err(LabError::Validation(format!("input has {} channels, output {}", u.pos.len(), y.pos.len())));
    }
    let period = 1.0 / rate_hz;
    let limit = MAX_GAP_PERIODS * period;
    let mut found: Vec<(&str, Gap)> = gaps(&u.t, limit).into_iter().map(|g| ("input", g)).collect();
    found.extend(gaps(&y.t, limit).into_iter().map(|g| ("output", g)));
    if !found.is_empty() {
        let list: Vec<String> =
            found.iter().map(|(s, g)| format!("{s} {:.3}-{:.3} s ({:.3} s)", g.start_s, g.end_s, g.end_s - g.start_s)).collect();
        return Err(LabError::Validation(format!(
            "gaps longer than {MAX_GAP_PERIODS} periods ({limit:.3} s): {}",
            list.join(", ")
        )));
    }
    let start = u.t[0].max(y.t[0]);
    let end = u.t[u.len() - 1].min(y.t[y.len() - 1]);
    if !(end > start) {
        return Err(LabError::Validation(format!("streams do not overlap (start {start} s, end {end} s)")));
    }
    // Tolerate rounding so a grid point landing on the last sample is kept.
    let n = ((end - start) * rate_hz + 1e-9).floor() as usize + 1;
    if n < 2 {
        return Err(LabError::Validation("overlap is shorter than one period".into()));
    }
    let grid: Vec<f64> = uniform_timestamps(n, rate_hz).into_iter().map(|t| start + t).collect();
    let mut max_gap: f64 = 0.0;
    let mut resample = |s: &TimedSamples| {
        let pos: Vec<Vec<f64>> = s
            .pos
            .iter()
            .map(|x| {
                let (v, g) = interpolate(&s.t, x, &grid);
                max_gap = max_gap.max(g);
                v
            })
            .collect();
        let vel: Vec<Vec<f64>> = match &s.vel {
            Some(vel) => vel.iter().map(|x| interpolate(&s.t, x, &grid).0).collect(),
            None => pos.iter().map(|p| central_difference(p, period)).collect(),
        };
        (pos, vel)
    };
    let (mut u_pos, mut u_vel) = resample(u);
    let (y_pos, y_vel) = resample(y);
    let positions = positions.min(u_pos.len());
    let rot = u_pos.split_off(positions);
    let ang_vel = u_vel.split_off(positions);
    let input = Trajectory {
        rate_hz,
        t: uniform_timestamps(n, rate_hz),
        pos: u_pos,
        vel: u_vel,
        rot,
        ang_vel,
        provenance: Provenance::Captured,
    };
    Ok(Aligned { input, t: grid, pos: y_pos, vel: y_vel, max_gap_s: max_gap })
}

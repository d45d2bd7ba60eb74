use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::record::SessionRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyVariant {
    /// `y = [x_f; ẋ_f]`
    Velocity,
    /// `y = [x_f; f_f]`
    Force,
}

/// One axis of paired input `[x_u; ẋ_u]` and output `[x_f; second]`.
#[derive(Debug, Clone, Copy)]
pub struct EnergyChannel<'a> {
    pub u_pos: &'a [f64],
    pub u_vel: &'a [f64],
    pub y_pos: &'a [f64],
    pub y_second: &'a [f64],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySeries {
    pub t: Vec<f64>,
    pub energy: Vec<f64>,
    pub variant: EnergyVariant,
}

impl EnergySeries {
    /// Smallest value from sample `from` on, or `None` past the end.
    pub fn min_from(&self, from: usize) -> Option<f64> {
        self.energy.get(from..).and_then(|e| e.iter().copied().reduce(f64::min))
    }
}

/// `E[k] = ΔT Σ_{j≤k} u[j]ᵀ y[j]`, accumulated left to right in sample
/// order, channels summed in order within each sample.
pub fn energy_series(channels: &[EnergyChannel], t: &[f64], dt: f64, variant: EnergyVariant) -> Result<EnergySeries> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(invalid("dt", format!("must be > 0, got {dt}")));
    }
    let n = t.len();
    for (c, ch) in channels.iter().enumerate() {
        for (name, len) in [("u_pos", ch.u_pos.len()), ("u_vel", ch.u_vel.len()), ("y_pos", ch.y_pos.len()), ("y_second", ch.y_second.len())] {
            if len != n {
                return Err(Error::DimensionMismatch(format!("channel {c}: {name} has {len} samples, expected {n}")));
            }
        }
    }
    let mut acc = 0.0;
    let energy = (0..n)
        .map(|j| {
            let mut s = 0.0;
            for ch in channels {
                s += ch.u_pos[j] * ch.y_pos[j] + ch.u_vel[j] * ch.y_second[j];
            }
            acc += s;
            dt * acc
        })
        .collect();
    Ok(EnergySeries { t: t.to_vec(), energy, variant })
}

/// Energy series over all channels of a record.
pub fn record_energy(record: &SessionRecord, variant: EnergyVariant) -> Result<EnergySeries> {
    if record.input.len() != record.len() {
        return Err(Error::DimensionMismatch("input and output lengths differ".into()));
    }
    let channels: Vec<EnergyChannel> = (0..record.n_channels())
        .map(|c| {
            let (u_pos, u_vel) = record.input.channel(c);
            EnergyChannel {
                u_pos,
                u_vel,
                y_pos: &record.output.pos[c],
                y_second: match variant {
                    EnergyVariant::Velocity => &record.output.vel[c],
                    EnergyVariant::Force => &record.output.force[c],
                },
            }
        })
        .collect();
    energy_series(&channels, &record.output.t, record.dt(), variant)
}

//! Signal-level analyses of follower sessions.

mod energy;
mod nyquist;
mod residuals;
mod spectral;

#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

pub use energy::{energy_series, record_energy, EnergyChannel, EnergySeries, EnergyVariant};
pub use nyquist::{nyquist_curve, passivity_crossing, passivity_crossing_rad};
pub use residuals::{
    bhattacharyya, gaussian_baseline, histogram_distance, residual_stats, ResidualStats, DEFAULT_BINS, DEFAULT_SPAN_SIGMAS,
};
pub use spectral::{
    amplitude_spectrum, coherence, compare_spectra, spectral_xcorr, time_xcorr, AmplitudeSpectrum, CoherenceResult,
    SpectrumResult, WelchOptions, MIN_SPECTRUM_LEN,
};

/// Pearson correlation of two equal-length signals.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} samples", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Empty("correlation needs samples"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate("correlation of a constant signal".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Total Euclidean distance travelled by the position axes.
pub fn path_length(traj: &Trajectory) -> f64 {
    let mut total = 0.0;
    for i in 1..traj.len() {
        let sq: f64 = traj.pos.iter().map(|p| (p[i] - p[i - 1]) * (p[i] - p[i - 1])).sum();
        total += sq.sqrt();
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{uniform_timestamps, Provenance};
    use alloc::vec;
    use alloc::vec::Vec;
    use core::f64::consts::PI;

    fn traj(pos: Vec<Vec<f64>>) -> Trajectory {
        let n = pos[0].len();
        Trajectory {
            rate_hz: 100.0,
            t: uniform_timestamps(n, 100.0),
            vel: vec![vec![0.0; n]; pos.len()],
            pos,
            rot: vec![],
            ang_vel: vec![],
            provenance: Provenance::External,
        }
    }

    #[test]
    fn straight_line_length() {
        let x: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        assert!((path_length(&traj(vec![x])) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quarter_circle_length() {
        let n = 1000;
        let th: Vec<f64> = (0..n).map(|i| 0.5 * PI * i as f64 / (n - 1) as f64).collect();
        let x = th.iter().map(|t| t.cos()).collect();
        let y = th.iter().map(|t| t.sin()).collect();
        assert!((path_length(&traj(vec![x, y])) - PI / 2.0).abs() < 1e-4);
    }

    #[test]
    fn pearson_signs() {
        let u: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let neg: Vec<f64> = u.iter().map(|v| -v).collect();
        assert!((pearson(&u, &u).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&u, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson(&u, &[1.0; 50]).is_err());
    }
}

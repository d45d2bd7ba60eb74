#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::model::FollowerParams;

/// `G(jω) = (bjω + k) / (m(jω)² + bjω + k)` on each `ω` (rad/s) of the grid.
pub fn nyquist_curve(params: &FollowerParams, omega_rad_s: &[f64]) -> Vec<Complex64> {
    omega_rad_s.iter().map(|&w| params.frequency_response(w)).collect()
}

/// Frequency (rad/s) where `Re G(jω)` changes sign, `ω² = k² / (km − b²)`.
/// `None` when `km ≤ b²`: the curve then stays in the right half plane.
pub fn passivity_crossing_rad(params: &FollowerParams) -> Option<f64> {
    let (m, b, k) = (params.mass, params.damping, params.stiffness);
    let margin = k * m - b * b;
    if margin <= 0.0 {
        return None;
    }
    Some(k / margin.sqrt())
}

/// [`passivity_crossing_rad`] in Hz.
pub fn passivity_crossing(params: &FollowerParams) -> Option<f64> {
    passivity_crossing_rad(params).map(|w| w / (2.0 * PI))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_dc_gain_and_strictly_proper() {
        let p = FollowerParams::new(1.0, 20.0, 270.0).unwrap();
        let g = nyquist_curve(&p, &[0.0, 1e9]);
        assert_eq!(g[0], Complex64::new(1.0, 0.0));
        assert!(g[1].norm() < 1e-6);
    }

    #[test]
    fn closed_form_examples() {
        let p = FollowerParams::new(1.0, 0.5, 1.0).unwrap();
        let w = passivity_crossing_rad(&p).unwrap();
        assert!((w - (1.0f64 / 0.75).sqrt()).abs() < 1e-12);
        assert!((passivity_crossing(&p).unwrap() - 0.18378).abs() < 1e-5);
        assert!(p.frequency_response(w).re.abs() < 1e-12);
        assert!(p.frequency_response(w * 1.001).re < 0.0);
        assert!(p.frequency_response(w * 0.999).re > 0.0);
        assert_eq!(passivity_crossing(&FollowerParams::new(1.0, 2.0, 1.0).unwrap()), None);
    }

    #[test]
    fn human_scale_crossing() {
        let p = FollowerParams::new(1.0, 13.0, 600.0).unwrap();
        let f = passivity_crossing(&p).unwrap();
        assert!((2.0..8.0).contains(&f), "{f}");
    }
}

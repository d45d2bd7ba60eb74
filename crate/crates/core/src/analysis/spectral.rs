#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::pearson;
use crate::error::{invalid, Error, Result};
use crate::fft::rfft;

/// Shortest signal accepted by [`amplitude_spectrum`].
pub const MIN_SPECTRUM_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeSpectrum {
    pub freq_hz: Vec<f64>,
    pub amplitude: Vec<f64>,
}

/// Input and output spectra with the correlation of their magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResult {
    pub freq_hz: Vec<f64>,
    pub input: Vec<f64>,
    pub output: Vec<f64>,
    pub xcorr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceResult {
    pub freq_hz: Vec<f64>,
    pub msc: Vec<f64>,
    /// Summed Welch periodogram of the input (unnormalized).
    pub input_power: Vec<f64>,
}

impl CoherenceResult {
    /// Bins whose input power exceeds `fraction` of the peak input power.
    pub fn in_band(&self, fraction: f64) -> Vec<usize> {
        let peak = self.input_power.iter().copied().fold(0.0, f64::max);
        (0..self.msc.len()).filter(|&k| peak > 0.0 && self.input_power[k] > fraction * peak).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WelchOptions {
    pub window_len: usize,
    /// Fraction of a window shared with the next one.
    pub overlap: f64,
}

impl Default for WelchOptions {
    fn default() -> Self {
        Self { window_len: 1024, overlap: 0.5 }
    }
}

fn hann(n: usize) -> Vec<f64> {
    // Periodic form, which tiles exactly at 50% overlap.
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

fn frequencies(n: usize, rate_hz: f64) -> Vec<f64> {
    (0..=n / 2).map(|k| k as f64 * rate_hz / n as f64).collect()
}

fn check_rate(rate_hz: f64) -> Result<()> {
    if !(rate_hz > 0.0) || !rate_hz.is_finite() {
        return Err(invalid("rate_hz", format!("must be > 0, got {rate_hz}")));
    }
    Ok(())
}

/// One-sided amplitude spectrum of the mean-removed, Hann-windowed signal,
/// scaled so a sinusoid of amplitude `A` on a bin peaks at `A`.
pub fn amplitude_spectrum(signal: &[f64], rate_hz: f64) -> Result<AmplitudeSpectrum> {
    check_rate(rate_hz)?;
    let n = signal.len();
    if n < MIN_SPECTRUM_LEN {
        return Err(Error::TooShort { required: MIN_SPECTRUM_LEN, actual: n });
    }
    let mean = signal.iter().sum::<f64>() / n as f64;
    let w = hann(n);
    let wsum: f64 = w.iter().sum();
    let windowed: Vec<f64> = signal.iter().zip(&w).map(|(x, w)| (x - mean) * w).collect();
    let spec = rfft(&windowed);
    let amplitude = (0..=n / 2)
        .map(|k| {
            let edge = k == 0 || (n.is_multiple_of(2) && k == n / 2);
            spec[k].norm() * if edge { 1.0 } else { 2.0 } / wsum
        })
        .collect();
    Ok(AmplitudeSpectrum { freq_hz: frequencies(n, rate_hz), amplitude })
}

/// Zero-lag Pearson correlation of the amplitude spectra of `u` and `y`.
pub fn spectral_xcorr(u: &[f64], y: &[f64], rate_hz: f64) -> Result<f64> {
    Ok(compare_spectra(u, y, rate_hz)?.xcorr)
}

pub fn compare_spectra(u: &[f64], y: &[f64], rate_hz: f64) -> Result<SpectrumResult> {
    if u.len() != y.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} samples", u.len(), y.len())));
    }
    let su = amplitude_spectrum(u, rate_hz)?;
    let sy = amplitude_spectrum(y, rate_hz)?;
    let xcorr = pearson(&su.amplitude, &sy.amplitude)
        .map_err(|_| Error::Degenerate("amplitude spectrum is flat or zero".into()))?;
    Ok(SpectrumResult { freq_hz: su.freq_hz, input: su.amplitude, output: sy.amplitude, xcorr })
}

/// Zero-lag Pearson correlation of the time signals.
pub fn time_xcorr(u: &[f64], y: &[f64]) -> Result<f64> {
    pearson(u, y)
}

/// Welch-averaged magnitude-squared coherence `|P_uy|² / (P_uu P_yy)`.
/// Bins where either auto-spectrum vanishes report 0.
pub fn coherence(u: &[f64], y: &[f64], rate_hz: f64, opts: &WelchOptions) -> Result<CoherenceResult> {
    check_rate(rate_hz)?;
    if u.len() != y.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} samples", u.len(), y.len())));
    }
    let len = opts.window_len;
    if len < 2 {
        return Err(invalid("window_len", format!("must be at least 2, got {len}")));
    }
    if !(0.0..1.0).contains(&opts.overlap) {
        return Err(invalid("overlap", format!("must lie in [0, 1), got {}", opts.overlap)));
    }
    let hop = ((len as f64 * (1.0 - opts.overlap)).round() as usize).max(1);
    let segments = if u.len() >= len { (u.len() - len) / hop + 1 } else { 0 };
    if segments < 4 {
        return Err(Error::TooShort { required: len + 3 * hop, actual: u.len() });
    }
    let w = hann(len);
    let bins = len / 2 + 1;
    let mut puu = vec![0.0; bins];
    let mut pyy = vec![0.0; bins];
    let mut puy = vec![Complex64::new(0.0, 0.0); bins];
    let prep = |s: &[f64]| -> Vec<f64> {
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        s.iter().zip(&w).map(|(x, w)| (x - mean) * w).collect()
    };
    for s in 0..segments {
        let range = s * hop..s * hop + len;
        let fu = rfft(&prep(&u[range.clone()]));
        let fy = rfft(&prep(&y[range]));
        for k in 0..bins {
            puu[k] += fu[k].norm_sqr();
            pyy[k] += fy[k].norm_sqr();
            puy[k] += fu[k].conj() * fy[k];
        }
    }
    let msc = (0..bins)
        .map(|k| {
            let den = puu[k] * pyy[k];
            if den > 0.0 {
                (puy[k].norm_sqr() / den).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    Ok(CoherenceResult { freq_hz: frequencies(len, rate_hz), msc, input_power: puu })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;
    use rand::Rng;

    fn tone(n: usize, rate: f64, f: f64, a: f64, phase: f64) -> Vec<f64> {
        (0..n).map(|i| a * (2.0 * PI * f * i as f64 / rate + phase).sin()).collect()
    }

    #[test]
    fn sinusoid_peaks_at_nearest_bin() {
        let (n, rate) = (1000, 100.0);
        let s = amplitude_spectrum(&tone(n, rate, 3.0, 0.2, 0.4), rate).unwrap();
        let (imax, _) = s.amplitude.iter().enumerate().fold((0, 0.0), |b, (i, &a)| if a > b.1 { (i, a) } else { b });
        assert!((s.freq_hz[imax] - 3.0).abs() < 1e-12);
        assert!((s.amplitude[imax] - 0.2).abs() < 1e-9);
    }

    #[test]
    fn constant_has_zero_spectrum() {
        let s = amplitude_spectrum(&[3.5; 64], 100.0).unwrap();
        assert!(s.amplitude.iter().all(|&a| a == 0.0));
        assert!(amplitude_spectrum(&[1.0; 15], 100.0).is_err());
    }

    #[test]
    fn spectral_xcorr_gain_and_delay() {
        let (n, rate) = (2000, 100.0);
        // Bin-centred tones so the circular shift below is an exact delay.
        let u: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                (2.0 * PI * 0.5 * t).sin() + 0.5 * (2.0 * PI * 1.5 * t + 1.0).sin() + 0.2 * (2.0 * PI * 4.0 * t).cos()
            })
            .collect();
        let y2: Vec<f64> = u.iter().map(|v| 2.0 * v).collect();
        assert!((spectral_xcorr(&u, &y2, rate).unwrap() - 1.0).abs() < 1e-12);
        let shift = 10;
        let delayed: Vec<f64> = (0..n).map(|i| u[(i + n - shift) % n]).collect();
        assert!((spectral_xcorr(&u, &delayed, rate).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn coherence_of_identical_signals_is_one() {
        let mut rng = SeedStream::new(3).rng(0);
        let u: Vec<f64> = (0..6000).map(|_| rng.random::<f64>() - 0.5).collect();
        let c = coherence(&u, &u, 100.0, &WelchOptions::default()).unwrap();
        assert_eq!(c.freq_hz.len(), 513);
        assert!(c.msc.iter().all(|&v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn coherence_drops_where_noise_dominates() {
        let mut rng = SeedStream::new(4).rng(0);
        let n = 24000;
        let white: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let u = crate::trajectory::lowpass_filter(&white, 100.0, 0.63, 0.05);
        let noise: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let hf = crate::trajectory::lowpass_filter(&noise, 100.0, 45.0, 0.05);
        let hf: Vec<f64> = hf.iter().zip(crate::trajectory::lowpass_filter(&noise, 100.0, 0.6, 0.05)).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = u.iter().zip(&hf).map(|(a, b)| a + b).collect();
        let c = coherence(&u, &y, 100.0, &WelchOptions::default()).unwrap();
        let band = |lo: f64, hi: f64| {
            let v: Vec<f64> = c.freq_hz.iter().zip(&c.msc).filter(|(f, _)| **f > lo && **f < hi).map(|(_, m)| *m).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(band(0.1, 0.5) > 0.9);
        assert!(band(1.0, 5.0) < 0.1);
    }

    #[test]
    fn coherence_requires_four_windows() {
        assert!(matches!(
            coherence(&[0.0; 2000], &[0.0; 2000], 100.0, &WelchOptions::default()),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn time_xcorr_identity_and_negation() {
        let u = tone(500, 100.0, 1.3, 1.0, 0.0);
        let neg: Vec<f64> = u.iter().map(|v| -v).collect();
        assert!((time_xcorr(&u, &u).unwrap() - 1.0).abs() < 1e-15);
        assert!((time_xcorr(&u, &neg).unwrap() + 1.0).abs() < 1e-15);
    }
}

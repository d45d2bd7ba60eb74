#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::SeedStream;

pub const DEFAULT_BINS: usize = 100;
/// Histogram range is the fitted mean ± this many standard deviations.
pub const DEFAULT_SPAN_SIGMAS: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub n: usize,
    pub mean: f64,
    pub sigma: f64,
    pub bhattacharyya: f64,
    /// `bins + 1` edges.
    pub bin_edges: Vec<f64>,
    /// Normalized residual histogram.
    pub histogram: Vec<f64>,
    /// Fitted Gaussian integrated over each bin, renormalized to the range.
    pub gaussian: Vec<f64>,
    #[serde(skip)]
    pub residuals: Vec<f64>,
}

/// `−ln Σ √(pᵢ qᵢ)` after normalizing both to unit sum.
pub fn bhattacharyya(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} bins", p.len(), q.len())));
    }
    if p.is_empty() {
        return Err(Error::Empty("histograms have no bins"));
    }
    if p.iter().chain(q).any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(invalid("histogram", "entries must be finite and >= 0"));
    }
    let (sp, sq) = (p.iter().sum::<f64>(), q.iter().sum::<f64>());
    if sp == 0.0 || sq == 0.0 {
        return Err(Error::Degenerate("histogram has no mass".into()));
    }
    if p == q {
        return Ok(0.0);
    }
    let bc: f64 = p.iter().zip(q).map(|(a, b)| (a / sp * (b / sq)).sqrt()).sum();
    Ok((-bc.min(1.0).ln()).max(0.0))
}

fn normal_cdf(x: f64, mean: f64, sigma: f64) -> f64 {
    0.5 * libm::erfc(-(x - mean) / (sigma * core::f64::consts::SQRT_2))
}

/// Distance between the histogram of `samples` and a Gaussian fitted by
/// sample mean and standard deviation, both over `mean ± span·σ`.
pub fn histogram_distance(samples: &[f64], bins: usize, span_sigmas: f64) -> Result<ResidualStats> {
    if samples.len() < 2 {
        return Err(Error::Empty("residual statistics need at least two samples"));
    }
    if bins == 0 {
        return Err(invalid("bins", "must be at least 1"));
    }
    if !(span_sigmas > 0.0) {
        return Err(invalid("span_sigmas", format!("must be > 0, got {span_sigmas}")));
    }
    if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
        return Err(invalid("residuals", format!("sample {i} is not finite")));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sigma = (samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    if sigma == 0.0 {
        return Err(Error::Degenerate("residuals are constant".into()));
    }
    let lo = mean - span_sigmas * sigma;
    let width = 2.0 * span_sigmas * sigma / bins as f64;
    let bin_edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0.0; bins];
    for v in samples {
        let idx = ((v - lo) / width).floor();
        if idx >= 0.0 && (idx as usize) < bins {
            counts[idx as usize] += 1.0;
        }
    }
    let total: f64 = counts.iter().sum();
    let histogram: Vec<f64> = counts.iter().map(|c| c / total).collect();
    let cdf: Vec<f64> = bin_edges.iter().map(|e| normal_cdf(*e, mean, sigma)).collect();
    let mass = cdf[bins] - cdf[0];
    let gaussian: Vec<f64> = cdf.windows(2).map(|w| (w[1] - w[0]) / mass).collect();
    let bhattacharyya = bhattacharyya(&histogram, &gaussian)?;
    Ok(ResidualStats {
        n: samples.len(),
        mean,
        sigma,
        bhattacharyya,
        bin_edges,
        histogram,
        gaussian,
        residuals: samples.to_vec(),
    })
}

/// Pools `measured − predicted` over axes and compares it with its fitted
/// Gaussian.
pub fn residual_stats(measured: &[Vec<f64>], predicted: &[Vec<f64>], bins: usize) -> Result<ResidualStats> {
    if measured.len() != predicted.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} axes", measured.len(), predicted.len())));
    }
    let mut pooled = Vec::new();
    for (axis, (m, p)) in measured.iter().zip(predicted).enumerate() {
        if m.len() != p.len() {
            return Err(Error::DimensionMismatch(format!("axis {axis}: {} vs {} samples", m.len(), p.len())));
        }
        pooled.extend(m.iter().zip(p).map(|(a, b)| a - b));
    }
    if pooled.is_empty() {
        return Err(Error::Empty("no residual samples"));
    }
    histogram_distance(&pooled, bins, DEFAULT_SPAN_SIGMAS)
}

/// Mean distance of `trials` Gaussian samples of size `n` to their own
/// fitted Gaussian: the floor expected from finite sampling alone.
pub fn gaussian_baseline(n: usize, bins: usize, trials: usize, seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(invalid("trials", "must be at least 1"));
    }
    let normal = Normal::new(0.0, 1.0).map_err(|e| invalid("sigma", format!("{e}")))?;
    let mut total = 0.0;
    for trial in 0..trials {
        let mut rng = SeedStream::new(seed).rng(trial as u64);
        let samples: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        total += histogram_distance(&samples, bins, DEFAULT_SPAN_SIGMAS)?.bhattacharyya;
    }
    Ok(total / trials as f64)
}

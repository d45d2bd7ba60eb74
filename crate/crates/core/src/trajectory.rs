//! Input trajectories for the follower: Fourier series and band-limited noise.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fft::{fft, ifft};
use crate::rng::{stream, SeedStream};

/// Default upper frequency of comfortable tracking (Hz).
pub const DEFAULT_CUTOFF_HZ: f64 = 0.63;
/// Width of the raised-cosine taper above the cutoff (Hz).
pub const DEFAULT_TRANSITION_HZ: f64 = 0.05;
pub const DEFAULT_RATE_HZ: f64 = 100.0;
pub const DEFAULT_FOURIER_DURATION_S: f64 = 120.0;
pub const DEFAULT_NOISE_DURATION_S: f64 = 240.0;
/// Default Fourier component frequencies per axis (Hz).
pub const DEFAULT_FOURIER_FREQUENCIES: [f64; 4] = [0.08, 0.17, 0.31, 0.55];
/// Largest rotation magnitude accepted by the orientation generator (50°).
pub const MAX_ROTATION_RAD: f64 = 50.0 * PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierComponent {
    pub amplitude: f64,
    pub frequency_hz: f64,
    pub phase: f64,
}

impl FourierComponent {
    fn position(&self, t: f64) -> f64 {
        self.amplitude * (2.0 * PI * self.frequency_hz * t + self.phase).sin()
    }

    fn velocity(&self, t: f64) -> f64 {
        let w = 2.0 * PI * self.frequency_hz;
        self.amplitude * w * (w * t + self.phase).cos()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierSpec {
    /// Components for each positional axis.
    pub axes: Vec<Vec<FourierComponent>>,
    pub duration_s: f64,
    pub rate_hz: f64,
    pub max_frequency_hz: f64,
}

impl FourierSpec {
    /// Default multi-sine: four components per axis at
    /// [`DEFAULT_FOURIER_FREQUENCIES`], equal amplitudes summing to
    /// `half_range`, phases drawn from `seed`.
    pub fn default_multisine(n_axes: usize, half_range: f64, seed: u64) -> Self {
        let mut rng = SeedStream::new(seed).rng(stream::FOURIER_PHASES);
        let amp = half_range / DEFAULT_FOURIER_FREQUENCIES.len() as f64;
        let axes = (0..n_axes)
            .map(|_| {
                DEFAULT_FOURIER_FREQUENCIES
                    .iter()
                    .map(|&f| FourierComponent {
                        amplitude: amp,
                        frequency_hz: f,
                        phase: rng.random::<f64>() * 2.0 * PI,
                    })
                    .collect()
            })
            .collect();
        Self {
            axes,
            duration_s: DEFAULT_FOURIER_DURATION_S,
            rate_hz: DEFAULT_RATE_HZ,
            max_frequency_hz: DEFAULT_CUTOFF_HZ,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_timing(self.duration_s, self.rate_hz)?;
        let nyquist = self.rate_hz / 2.0;
        for c in self.axes.iter().flatten() {
            if !(c.amplitude >= 0.0) || !c.amplitude.is_finite() {
                return Err(invalid("amplitude", format!("must be finite and >= 0, got {}", c.amplitude)));
            }
            if !c.frequency_hz.is_finite() || c.frequency_hz < 0.0 {
                return Err(invalid("frequency_hz", format!("must be finite and >= 0, got {}", c.frequency_hz)));
            }
            if c.frequency_hz >= nyquist {
                return Err(Error::Aliasing {
                    frequency_hz: c.frequency_hz,
                    nyquist_hz: nyquist,
                });
            }
            if c.frequency_hz > self.max_frequency_hz {
                return Err(invalid(
                    "frequency_hz",
                    format!("{} Hz exceeds max_frequency_hz {}", c.frequency_hz, self.max_frequency_hz),
                ));
            }
            if !c.phase.is_finite() {
                return Err(invalid("phase", "must be finite"));
            }
        }
        Ok(())
    }

    /// Analytic position of `axis` at time `t`.
    pub fn position(&self, axis: usize, t: f64) -> f64 {
        self.axes[axis].iter().map(|c| c.position(t)).sum()
    }

    /// Analytic velocity of `axis` at time `t`.
    pub fn velocity(&self, axis: usize, t: f64) -> f64 {
        self.axes[axis].iter().map(|c| c.velocity(t)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseTrajSpec {
    pub seed: u64,
    pub duration_s: f64,
    pub rate_hz: f64,
    pub cutoff_hz: f64,
    pub transition_hz: f64,
    /// Per-axis `(low, high)` range of the uniform draws, in m or rad.
    pub ranges: Vec<(f64, f64)>,
}

impl NoiseTrajSpec {
    pub fn new(seed: u64, ranges: Vec<(f64, f64)>) -> Self {
        Self {
            seed,
            duration_s: DEFAULT_NOISE_DURATION_S,
            rate_hz: DEFAULT_RATE_HZ,
            cutoff_hz: DEFAULT_CUTOFF_HZ,
            transition_hz: DEFAULT_TRANSITION_HZ,
            ranges,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_timing(self.duration_s, self.rate_hz)?;
        if !(self.cutoff_hz > 0.0 && self.cutoff_hz < self.rate_hz / 2.0) {
            return Err(invalid(
                "cutoff_hz",
                format!("must satisfy 0 < cutoff < rate/2 = {}, got {}", self.rate_hz / 2.0, self.cutoff_hz),
            ));
        }
        if !(self.transition_hz >= 0.0) || self.cutoff_hz + self.transition_hz > self.rate_hz / 2.0 {
            return Err(invalid("transition_hz", "taper must be >= 0 and end below rate/2"));
        }
        if self.duration_s * self.cutoff_hz < 4.0 {
            return Err(invalid(
                "duration_s",
                format!("{} s holds fewer than 4 periods of the {} Hz cutoff", self.duration_s, self.cutoff_hz),
            ));
        }
        for &(lo, hi) in &self.ranges {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(invalid("ranges", format!("need finite low <= high, got ({lo}, {hi})")));
            }
        }
        Ok(())
    }
}

fn check_timing(duration_s: f64, rate_hz: f64) -> Result<()> {
    if !(rate_hz > 0.0) || !rate_hz.is_finite() {
        return Err(invalid("rate_hz", format!("must be positive, got {rate_hz}")));
    }
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(invalid("duration_s", format!("must be positive, got {duration_s}")));
    }
    if (duration_s * rate_hz).round() < 2.0 {
        return Err(invalid("duration_s", "trajectory needs at least two samples"));
    }
    Ok(())
}

/// Where a trajectory came from; enough to regenerate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Fourier { spec: FourierSpec },
    FilteredNoise { spec: NoiseTrajSpec },
    OrientationNoise { spec: NoiseTrajSpec },
    SingleAxis { axis: usize, source: Box<Provenance> },
    Composite { parts: Vec<Provenance> },
    Delayed { samples: usize, source: Box<Provenance> },
    Captured,
    External,
}

/// Uniformly sampled multi-axis signal. Channels are ordered positions first,
/// then rotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub rate_hz: f64,
    pub t: Vec<f64>,
    pub pos: Vec<Vec<f64>>,
    pub vel: Vec<Vec<f64>>,
    #[serde(default)]
    pub rot: Vec<Vec<f64>>,
    #[serde(default)]
    pub ang_vel: Vec<Vec<f64>>,
    pub provenance: Provenance,
}

/// Timestamps `i / rate` for `n` samples.
pub fn uniform_timestamps(n: usize, rate_hz: f64) -> Vec<f64> {
    let dt = 1.0 / rate_hz;
    (0..n).map(|i| i as f64 * dt).collect()
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate_hz
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.rate_hz
    }

    pub fn n_positions(&self) -> usize {
        self.pos.len()
    }

    pub fn n_rotations(&self) -> usize {
        self.rot.len()
    }

    pub fn n_channels(&self) -> usize {
        self.pos.len() + self.rot.len()
    }

    /// `(position, velocity)` of channel `i` (positions, then rotations).
    pub fn channel(&self, i: usize) -> (&[f64], &[f64]) {
        let np = self.pos.len();
        if i < np {
            (&self.pos[i], &self.vel[i])
        } else {
            (&self.rot[i - np], &self.ang_vel[i - np])
        }
    }

    fn channel_mut(&mut self, i: usize) -> (&mut Vec<f64>, &mut Vec<f64>) {
        let np = self.pos.len();
        if i < np {
            (&mut self.pos[i], &mut self.vel[i])
        } else {
            (&mut self.rot[i - np], &mut self.ang_vel[i - np])
        }
    }

    /// Checks shape, finiteness and uniform sampling.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n < 2 {
            return Err(Error::TooShort { required: 2, actual: n });
        }
        if self.vel.len() != self.pos.len() || self.ang_vel.len() != self.rot.len() {
            return Err(Error::DimensionMismatch("velocity channel count differs from position".into()));
        }
        for i in 0..self.n_channels() {
            let (p, v) = self.channel(i);
            if p.len() != n || v.len() != n {
                return Err(Error::DimensionMismatch(format!("channel {i} length differs from timestamps")));
            }
            if p.iter().chain(v).any(|x| !x.is_finite()) {
                return Err(invalid("trajectory", format!("channel {i} has a non-finite sample")));
            }
        }
        check_uniform(&self.t, self.dt())
    }

    /// Appends the channels of `other` (same timing) to this trajectory.
    pub fn merged(mut self, other: Trajectory) -> Result<Trajectory> {
        if other.len() != self.len() || other.rate_hz != self.rate_hz {
            return Err(Error::DimensionMismatch("merged trajectories must share timing".into()));
        }
        self.pos.extend(other.pos);
        self.vel.extend(other.vel);
        self.rot.extend(other.rot);
        self.ang_vel.extend(other.ang_vel);
        let parts = match (self.provenance, other.provenance) {
            (Provenance::Composite { mut parts }, p) => {
                parts.push(p);
                parts
            }
            (a, b) => vec![a, b],
        };
        self.provenance = Provenance::Composite { parts };
        Ok(self)
    }

    /// Delays every channel by `samples`, filling the head with zeros.
    pub fn delayed(&self, samples: usize) -> Trajectory {
        let shift = |v: &Vec<f64>| {
            let mut out = vec![0.0; v.len()];
            if samples < v.len() {
                out[samples..].copy_from_slice(&v[..v.len() - samples]);
            }
            out
        };
        Trajectory {
            rate_hz: self.rate_hz,
            t: self.t.clone(),
            pos: self.pos.iter().map(shift).collect(),
            vel: self.vel.iter().map(shift).collect(),
            rot: self.rot.iter().map(shift).collect(),
            ang_vel: self.ang_vel.iter().map(shift).collect(),
            provenance: Provenance::Delayed {
                samples,
                source: Box::new(self.provenance.clone()),
            },
        }
    }

    /// Samples `[start, end)` with timestamps re-based to zero.
    pub fn slice(&self, start: usize, end: usize) -> Trajectory {
        let cut = |v: &Vec<f64>| v[start..end].to_vec();
        Trajectory {
            rate_hz: self.rate_hz,
            t: uniform_timestamps(end - start, self.rate_hz),
            pos: self.pos.iter().map(cut).collect(),
            vel: self.vel.iter().map(cut).collect(),
            rot: self.rot.iter().map(cut).collect(),
            ang_vel: self.ang_vel.iter().map(cut).collect(),
            provenance: self.provenance.clone(),
        }
    }
}

pub(crate) fn check_uniform(t: &[f64], dt: f64) -> Result<()> {
    let tol = 1e-9 * dt.max(1.0);
    for i in 1..t.len() {
        let step = t[i] - t[i - 1];
        if (step - dt).abs() > tol + 1e-12 * t[i].abs() {
            return Err(Error::NonUniformTimestamps { index: i });
        }
    }
    Ok(())
}

/// Sum of sinusoids per axis with analytic velocity.
pub fn gen_fourier(spec: &FourierSpec) -> Result<Trajectory> {
    spec.validate()?;
    let n = (spec.duration_s * spec.rate_hz).round() as usize;
    let t = uniform_timestamps(n, spec.rate_hz);
    let pos = (0..spec.axes.len())
        .map(|a| t.iter().map(|&ti| spec.position(a, ti)).collect())
        .collect();
    let vel = (0..spec.axes.len())
        .map(|a| t.iter().map(|&ti| spec.velocity(a, ti)).collect())
        .collect();
    Ok(Trajectory {
        rate_hz: spec.rate_hz,
        t,
        pos,
        vel,
        rot: Vec::new(),
        ang_vel: Vec::new(),
        provenance: Provenance::Fourier { spec: spec.clone() },
    })
}

/// Zero-phase low-pass gain: 1 up to `cutoff`, raised-cosine taper of width
/// `transition`, 0 beyond.
pub fn lowpass_gain(freq_hz: f64, cutoff_hz: f64, transition_hz: f64) -> f64 {
    let f = freq_hz.abs();
    if f <= cutoff_hz {
        1.0
    } else if f < cutoff_hz + transition_hz {
        0.5 * (1.0 + (PI * (f - cutoff_hz) / transition_hz).cos())
    } else {
        0.0
    }
}

/// Applies [`lowpass_gain`] in the discrete frequency domain (circular,
/// zero-phase).
pub fn lowpass_filter(signal: &[f64], rate_hz: f64, cutoff_hz: f64, transition_hz: f64) -> Vec<f64> {
    let n = signal.len();
    let buf: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let mut spec = fft(&buf);
    for (k, v) in spec.iter_mut().enumerate() {
        let bin = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        *v *= lowpass_gain(bin * rate_hz / n as f64, cutoff_hz, transition_hz);
    }
    ifft(&spec).into_iter().map(|c| c.re).collect()
}

/// Second-order central differences, one-sided second-order at the ends.
pub fn central_difference(x: &[f64], dt: f64) -> Vec<f64> {
    let n = x.len();
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        2 => {
            let d = (x[1] - x[0]) / dt;
            vec![d, d]
        }
        _ => {
            let mut v = vec![0.0; n];
            v[0] = (-3.0 * x[0] + 4.0 * x[1] - x[2]) / (2.0 * dt);
            for i in 1..n - 1 {
                v[i] = (x[i + 1] - x[i - 1]) / (2.0 * dt);
            }
            v[n - 1] = (3.0 * x[n - 1] - 4.0 * x[n - 2] + x[n - 3]) / (2.0 * dt);
            v
        }
    }
}

/// One filtered-noise channel. After filtering, the signal is rescaled about
/// the range midpoint so that its peak excursion spans the range exactly.
fn noise_channel(spec: &NoiseTrajSpec, axis: usize, n: usize) -> Vec<f64> {
    let (lo, hi) = spec.ranges[axis];
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    if half == 0.0 {
        return vec![mid; n];
    }
    let mut rng = SeedStream::new(spec.seed).rng(stream::TRAJECTORY_AXIS + axis as u64);
    let dist = Uniform::new_inclusive(lo, hi).expect("validated range");
    let raw: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
    let filtered = lowpass_filter(&raw, spec.rate_hz, spec.cutoff_hz, spec.transition_hz);
    let peak = filtered.iter().map(|x| (x - mid).abs()).fold(0.0, f64::max);
    if peak == 0.0 {
        return vec![mid; n];
    }
    let scale = half / peak;
    filtered
        .into_iter()
        .map(|x| (mid + (x - mid) * scale).clamp(lo, hi))
        .collect()
}

fn noise_channels(spec: &NoiseTrajSpec) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    spec.validate()?;
    let n = (spec.duration_s * spec.rate_hz).round() as usize;
    let t = uniform_timestamps(n, spec.rate_hz);
    let dt = 1.0 / spec.rate_hz;
    let pos: Vec<Vec<f64>> = (0..spec.ranges.len()).map(|a| noise_channel(spec, a, n)).collect();
    let vel = pos.iter().map(|p| central_difference(p, dt)).collect();
    Ok((t, pos, vel))
}

/// Uniform draws per sample per axis, low-passed with a sharp zero-phase
/// cutoff; velocity by central differences.
pub fn gen_filtered_noise(spec: &NoiseTrajSpec) -> Result<Trajectory> {
    let (t, pos, vel) = noise_channels(spec)?;
    Ok(Trajectory {
        rate_hz: spec.rate_hz,
        t,
        pos,
        vel,
        rot: Vec::new(),
        ang_vel: Vec::new(),
        provenance: Provenance::FilteredNoise { spec: spec.clone() },
    })
}

/// Same as [`gen_filtered_noise`] but on rotation channels, limited to ±50°.
pub fn gen_orientation_noise(spec: &NoiseTrajSpec) -> Result<Trajectory> {
    for &(lo, hi) in &spec.ranges {
        if lo < -MAX_ROTATION_RAD - 1e-12 || hi > MAX_ROTATION_RAD + 1e-12 {
            return Err(invalid(
                "ranges",
                format!("rotation range ({lo}, {hi}) rad exceeds ±50° = ±{MAX_ROTATION_RAD:.4} rad"),
            ));
        }
    }
    let (t, rot, ang_vel) = noise_channels(spec)?;
    Ok(Trajectory {
        rate_hz: spec.rate_hz,
        t,
        pos: Vec::new(),
        vel: Vec::new(),
        rot,
        ang_vel,
        provenance: Provenance::OrientationNoise { spec: spec.clone() },
    })
}

/// Keeps only channel `axis` moving: other channels hold their first sample
/// with zero velocity.
pub fn single_axis_mask(traj: &Trajectory, axis: usize) -> Result<Trajectory> {
    if axis >= traj.n_channels() {
        return Err(invalid(
            "axis",
            format!("axis {axis} out of range for {} channels", traj.n_channels()),
        ));
    }
    let mut out = traj.clone();
    for i in (0..traj.n_channels()).filter(|&i| i != axis) {
        let (p, v) = out.channel_mut(i);
        let hold = p.first().copied().unwrap_or(0.0);
        p.iter_mut().for_each(|x| *x = hold);
        v.iter_mut().for_each(|x| *x = 0.0);
    }
    out.provenance = Provenance::SingleAxis {
        axis,
        source: Box::new(traj.provenance.clone()),
    };
    Ok(out)
}

/// Periodogram `|X_k|²/n` of a real signal (no window), one-sided bins.
pub fn periodogram(signal: &[f64]) -> Vec<f64> {
    let n = signal.len();
    let spec = crate::fft::rfft(signal);
    spec[..n / 2 + 1].iter().map(|c| c.norm_sqr() / n as f64).collect()
}

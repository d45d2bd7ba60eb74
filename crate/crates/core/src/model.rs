//! Mass-spring-damper follower model: construction, composition, simulation.
//!
//! A 1-DOF follower has state `[x_f, ẋ_f]`, input `[x_u, ẋ_u]` (target
//! position and velocity) and output `[x_f, f_f]`. Multi-axis models are
//! block-diagonal with the same per-axis interleaving. Orientation axes use
//! the identical structure with inertia (kg·m²), rotational damping
//! (N·m·s/rad) and stiffness (N·m/rad); this is only meaningful for
//! rotations well below 60°.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{spectral_abscissa, zoh};
use crate::record::{AxesDescriptor, OutputSamples, SessionRecord, Source, SyntheticTruth, SCHEMA_VERSION};
use crate::rng::{stream, SeedStream};
use crate::trajectory::{check_uniform, Trajectory};

/// Position noise of a human follower (m).
pub const HUMAN_SIGMA_POS: f64 = 0.007;
pub const DEFAULT_DT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FollowerParams {
    /// kg (or kg·m² for rotations)
    pub mass: f64,
    /// N·s/m
    pub damping: f64,
    /// N/m
    pub stiffness: f64,
}

impl FollowerParams {
    pub fn new(mass: f64, damping: f64, stiffness: f64) -> Result<Self> {
        let p = Self { mass, damping, stiffness };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("mass", self.mass), ("damping", self.damping), ("stiffness", self.stiffness)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn stiffness_per_mass(&self) -> f64 {
        self.stiffness / self.mass
    }

    pub fn damping_per_mass(&self) -> f64 {
        self.damping / self.mass
    }

    /// rad/s
    pub fn natural_frequency(&self) -> f64 {
        self.stiffness_per_mass().sqrt()
    }

    pub fn damping_ratio(&self) -> f64 {
        self.damping / (2.0 * (self.stiffness * self.mass).sqrt())
    }

    /// Roots of `m s² + b s + k`.
    pub fn poles(&self) -> [Complex64; 2] {
        let (m, b, k) = (self.mass, self.damping, self.stiffness);
        let disc = b * b - 4.0 * m * k;
        if disc >= 0.0 {
            let r = disc.sqrt();
            [
                Complex64::new((-b - r) / (2.0 * m), 0.0),
                Complex64::new((-b + r) / (2.0 * m), 0.0),
            ]
        } else {
            let i = (-disc).sqrt() / (2.0 * m);
            [Complex64::new(-b / (2.0 * m), -i), Complex64::new(-b / (2.0 * m), i)]
        }
    }

    pub fn is_hurwitz(&self) -> bool {
        self.poles().iter().all(|p| p.re < 0.0)
    }

    /// Position-to-position response `G(jω) = (bjω + k)/(m(jω)² + bjω + k)`.
    pub fn frequency_response(&self, omega: f64) -> Complex64 {
        let jw = Complex64::new(0.0, omega);
        (jw * self.damping + self.stiffness) / (jw * jw * self.mass + jw * self.damping + self.stiffness)
    }
}

/// Flat surface normal to `axis` at `surface_height`; free space is above it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvParams {
    /// k_p, N/m
    pub stiffness: f64,
    /// b_p, N·s/m
    pub damping: f64,
    pub surface_height: f64,
    #[serde(default)]
    pub axis: usize,
    pub enabled: bool,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self::free_space()
    }
}

impl EnvParams {
    pub fn free_space() -> Self {
        Self {
            stiffness: 0.0,
            damping: 0.0,
            surface_height: 0.0,
            axis: 0,
            enabled: false,
        }
    }

    pub fn surface(stiffness: f64, damping: f64, surface_height: f64, axis: usize) -> Result<Self> {
        let env = Self {
            stiffness,
            damping,
            surface_height,
            axis,
            enabled: true,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.stiffness >= 0.0) || !self.stiffness.is_finite() {
            return Err(invalid("env.stiffness", "must be finite and >= 0"));
        }
        if !(self.damping >= 0.0) || !self.damping.is_finite() {
            return Err(invalid("env.damping", "must be finite and >= 0"));
        }
        if !self.surface_height.is_finite() {
            return Err(invalid("env.surface_height", "must be finite"));
        }
        Ok(())
    }

    pub fn penetrating(&self, x: f64) -> bool {
        self.enabled && x < self.surface_height
    }
}

/// How the force channel is produced in simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactLaw {
    /// Zero in free space, spring-damper during penetration, never pulling.
    #[default]
    Unilateral,
    /// The raw linear output row `k_p (x - h) + b_p ẋ` at all times.
    Linear,
}

/// Normal force (N, ≥ 0) the follower exerts on the surface.
pub fn contact_force(env: &EnvParams, x: f64, xdot: f64) -> f64 {
    if !env.penetrating(x) {
        return 0.0;
    }
    let depth = env.surface_height - x;
    (env.stiffness * depth + env.damping * (-xdot)).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Output position noise standard deviation (m).
    pub sigma_pos: f64,
    pub seed: u64,
    pub force_noise_enabled: bool,
}

impl NoiseModel {
    pub fn human(seed: u64) -> Self {
        Self {
            sigma_pos: HUMAN_SIGMA_POS,
            seed,
            force_noise_enabled: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_pos >= 0.0) || !self.sigma_pos.is_finite() {
            return Err(invalid("noise.sigma_pos", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Per-axis position and velocity of the follower's tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowerState {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl FollowerState {
    pub fn new(position: Vec<f64>, velocity: Vec<f64>) -> Result<Self> {
        let s = Self { position, velocity };
        if s.position.len() != s.velocity.len() {
            return Err(Error::DimensionMismatch("state position/velocity lengths differ".into()));
        }
        if s.position.iter().chain(&s.velocity).any(|v| !v.is_finite()) {
            return Err(invalid("state", "values must be finite"));
        }
        Ok(s)
    }

    /// Interleaved state vector `[x_1, ẋ_1, x_2, ẋ_2, …]`.
    pub fn to_vector(&self) -> Vec<f64> {
        self.position.iter().zip(&self.velocity).flat_map(|(x, v)| [*x, *v]).collect()
    }

    pub fn from_vector(x: &[f64]) -> Result<Self> {
        if !x.len().is_multiple_of(2) {
            return Err(Error::DimensionMismatch("state vector length must be even".into()));
        }
        Self::new(x.iter().step_by(2).copied().collect(), x.iter().skip(1).step_by(2).copied().collect())
    }
}

/// One output sample of a single axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputSample {
    pub position: f64,
    pub force: f64,
}

/// Draws the additive output noise of the stochastic follower. Position and
/// force noise come from separate streams of the noise seed.
pub struct NoiseSampler {
    noise: NoiseModel,
    pos_rng: ChaCha8Rng,
    force_rng: ChaCha8Rng,
}

impl NoiseSampler {
    pub fn new(noise: NoiseModel) -> Result<Self> {
        noise.validate()?;
        let seeds = SeedStream::new(noise.seed);
        Ok(Self {
            noise,
            pos_rng: seeds.rng(stream::POSITION_NOISE),
            force_rng: seeds.rng(stream::FORCE_NOISE),
        })
    }

    /// Adds `N(0, σ)` to position and, during contact, `N(0, σ·k_p)` to force.
    pub fn stochastic_output(&mut self, y: OutputSample, in_contact: bool, k_p: f64) -> OutputSample {
        let sigma = self.noise.sigma_pos;
        let z: f64 = StandardNormal.sample(&mut self.pos_rng);
        let mut out = OutputSample {
            position: y.position + sigma * z,
            force: y.force,
        };
        if in_contact && self.noise.force_noise_enabled {
            let z: f64 = StandardNormal.sample(&mut self.force_rng);
            out.force += sigma * k_p * z;
        }
        out
    }
}

/// Role of a matrix entry under the block-diagonal (uncoupled) hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryClass {
    /// Inside a diagonal block and non-zero in the physical model.
    Nonzero,
    /// Inside a diagonal block but structurally zero in the physical model.
    BlockZero,
    /// Outside every diagonal block: zero if the axes are uncoupled.
    OffBlock,
}

impl EntryClass {
    pub fn expected_zero(self) -> bool {
        !matches!(self, EntryClass::Nonzero)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureMask {
    #[serde(with = "rows")]
    pub a: DMatrix<EntryClass>,
    #[serde(with = "rows")]
    pub b: DMatrix<EntryClass>,
    #[serde(with = "rows")]
    pub c: DMatrix<EntryClass>,
}

impl StructureMask {
    /// Entries of every matrix outside the diagonal blocks.
    pub fn off_block_count(&self) -> usize {
        [&self.a, &self.b, &self.c]
            .iter()
            .map(|m| m.iter().filter(|e| **e == EntryClass::OffBlock).count())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpaceModel {
    #[serde(with = "rows")]
    pub a: DMatrix<f64>,
    #[serde(with = "rows")]
    pub b: DMatrix<f64>,
    #[serde(with = "rows")]
    pub c: DMatrix<f64>,
    #[serde(with = "rows")]
    pub d: DMatrix<f64>,
    pub dof: usize,
    pub mask: StructureMask,
}

impl StateSpaceModel {
    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn check_dimensions(&self) -> Result<()> {
        let (n, m, p) = (self.n_states(), self.n_inputs(), self.n_outputs());
        if !self.a.is_square()
            || self.b.nrows() != n
            || self.c.ncols() != n
            || self.d.shape() != (p, m)
            || n != 2 * self.dof
            || m != 2 * self.dof
            || p != 2 * self.dof
        {
            return Err(Error::DimensionMismatch(format!(
                "A {:?}, B {:?}, C {:?}, D {:?} for {} DOF",
                self.a.shape(),
                self.b.shape(),
                self.c.shape(),
                self.d.shape(),
                self.dof
            )));
        }
        Ok(())
    }

    /// Largest real part of the eigenvalues of `A` (`+∞` if undefined).
    pub fn spectral_abscissa(&self) -> f64 {
        spectral_abscissa(&self.a).unwrap_or(f64::INFINITY)
    }

    pub fn is_stable(&self) -> bool {
        self.spectral_abscissa() < 0.0
    }
}

/// 1-DOF state-space form of the follower.
pub fn build_state_space(params: &FollowerParams, env: &EnvParams) -> Result<StateSpaceModel> {
    params.validate()?;
    env.validate()?;
    let (kf, bf) = (params.stiffness_per_mass(), params.damping_per_mass());
    use EntryClass::{BlockZero as Z, Nonzero as N};
    Ok(StateSpaceModel {
        a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -kf, -bf]),
        b: DMatrix::from_row_slice(2, 2, &[0.0, 0.0, kf, bf]),
        c: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, env.stiffness, env.damping]),
        d: DMatrix::zeros(2, 2),
        dof: 1,
        mask: StructureMask {
            a: DMatrix::from_row_slice(2, 2, &[Z, N, N, N]),
            b: DMatrix::from_row_slice(2, 2, &[Z, Z, N, N]),
            c: DMatrix::from_row_slice(2, 2, &[N, Z, N, N]),
        },
    })
}

fn block_diag<T: nalgebra::Scalar + Copy>(blocks: &[&DMatrix<T>], fill: T) -> DMatrix<T> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::from_element(rows, cols, fill);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Uncoupled multi-axis model from per-axis models.
pub fn block_diagonal(models: &[StateSpaceModel]) -> Result<StateSpaceModel> {
    if models.is_empty() {
        return Err(Error::Empty("block_diagonal needs at least one model"));
    }
    for m in models {
        m.check_dimensions()?;
    }
    let pick = |f: fn(&StateSpaceModel) -> &DMatrix<f64>| -> Vec<&DMatrix<f64>> { models.iter().map(f).collect() };
    let mask = |f: fn(&StructureMask) -> &DMatrix<EntryClass>| -> Vec<&DMatrix<EntryClass>> {
        models.iter().map(|m| f(&m.mask)).collect()
    };
    Ok(StateSpaceModel {
        a: block_diag(&pick(|m| &m.a), 0.0),
        b: block_diag(&pick(|m| &m.b), 0.0),
        c: block_diag(&pick(|m| &m.c), 0.0),
        d: block_diag(&pick(|m| &m.d), 0.0),
        dof: models.iter().map(|m| m.dof).sum(),
        mask: StructureMask {
            a: block_diag(&mask(|m| &m.a), EntryClass::OffBlock),
            b: block_diag(&mask(|m| &m.b), EntryClass::OffBlock),
            c: block_diag(&mask(|m| &m.c), EntryClass::OffBlock),
        },
    })
}

/// Exact ZOH discretization stored row-major for fast stepping.
#[derive(Debug, Clone)]
pub struct DiscreteModel {
    n: usize,
    m: usize,
    p: usize,
    ad: Vec<f64>,
    bd: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

fn matvec_acc(mat: &[f64], cols: usize, v: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        let row = &mat[r * cols..(r + 1) * cols];
        *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

impl DiscreteModel {
    pub fn new(model: &StateSpaceModel, dt: f64) -> Self {
        let (ad, bd) = zoh(&model.a, &model.b, dt);
        Self {
            n: model.n_states(),
            m: model.n_inputs(),
            p: model.n_outputs(),
            ad: row_major(&ad),
            bd: row_major(&bd),
            c: row_major(&model.c),
            d: row_major(&model.d),
        }
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    /// Runs `x[k+1] = Ad x[k] + Bd u[k]` for every input sample and returns
    /// the states `x[0..N]` and outputs `y[k] = C x[k] + D u[k]`, row-major.
    pub fn run(&self, x0: &[f64], inputs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        assert_eq!(x0.len(), self.n);
        assert_eq!(inputs.len() % self.m, 0);
        let steps = inputs.len() / self.m;
        let mut states = Vec::with_capacity(steps * self.n);
        let mut outputs = vec![0.0; steps * self.p];
        let mut x = x0.to_vec();
        let mut next = vec![0.0; self.n];
        for k in 0..steps {
            let u = &inputs[k * self.m..(k + 1) * self.m];
            states.extend_from_slice(&x);
            let y = &mut outputs[k * self.p..(k + 1) * self.p];
            matvec_acc(&self.c, self.n, &x, y);
            matvec_acc(&self.d, self.m, u, y);
            next.iter_mut().for_each(|v| *v = 0.0);
            matvec_acc(&self.ad, self.n, &x, &mut next);
            matvec_acc(&self.bd, self.m, u, &mut next);
            core::mem::swap(&mut x, &mut next);
        }
        (states, outputs)
    }
}

/// Starting state of a simulation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// Position equal to the first input sample, zero velocity.
    #[default]
    InputAligned,
    Zero,
    /// Full state vector `[x_1, ẋ_1, x_2, ẋ_2, …]`.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub noise: Option<NoiseModel>,
    pub initial: InitialState,
    pub env: EnvParams,
    pub contact_law: ContactLaw,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            noise: None,
            initial: InitialState::InputAligned,
            env: EnvParams::free_space(),
            contact_law: ContactLaw::Unilateral,
        }
    }
}

/// Interleaves trajectory channels into `[x_1, ẋ_1, x_2, ẋ_2, …]` per sample.
pub fn interleave_inputs(input: &Trajectory) -> Vec<f64> {
    let k = input.n_channels();
    let n = input.len();
    let mut u = vec![0.0; n * 2 * k];
    for c in 0..k {
        let (p, v) = input.channel(c);
        for i in 0..n {
            u[i * 2 * k + 2 * c] = p[i];
            u[i * 2 * k + 2 * c + 1] = v[i];
        }
    }
    u
}

pub(crate) fn initial_vector(initial: &InitialState, input: &Trajectory, n: usize) -> Result<Vec<f64>> {
    match initial {
        InitialState::Zero => Ok(vec![0.0; n]),
        InitialState::InputAligned => {
            let mut x0 = vec![0.0; n];
            for c in 0..input.n_channels() {
                x0[2 * c] = input.channel(c).0[0];
            }
            Ok(x0)
        }
        InitialState::Explicit(v) => {
            if v.len() != n || v.iter().any(|x| !x.is_finite()) {
                return Err(invalid("initial", format!("need {n} finite state entries, got {}", v.len())));
            }
            Ok(v.clone())
        }
    }
}

/// Simulates the follower on `input`, producing a full session record.
pub fn simulate(model: &StateSpaceModel, input: &Trajectory, config: &SimConfig) -> Result<SessionRecord> {
    if !(config.dt > 0.0) || !config.dt.is_finite() {
        return Err(invalid("dt", format!("must be > 0, got {}", config.dt)));
    }
    model.check_dimensions()?;
    config.env.validate()?;
    let abscissa = model.spectral_abscissa();
    if !(abscissa < 0.0) {
        return Err(Error::Unstable(abscissa));
    }
    if input.n_channels() != model.dof {
        return Err(Error::DimensionMismatch(format!(
            "input has {} channels, model has {} DOF",
            input.n_channels(),
            model.dof
        )));
    }
    input.validate()?;
    if ((1.0 / input.rate_hz) - config.dt).abs() > 1e-9 * config.dt {
        return Err(Error::NonUniformTimestamps { index: 0 });
    }
    check_uniform(&input.t, config.dt)?;

    let disc = DiscreteModel::new(model, config.dt);
    let x0 = initial_vector(&config.initial, input, disc.n_states())?;
    let (states, outputs) = disc.run(&x0, &interleave_inputs(input));

    let k = model.dof;
    let n = input.len();
    let env = &config.env;
    let mut sampler = config.noise.map(NoiseSampler::new).transpose()?;
    let mut pos = vec![vec![0.0; n]; k];
    let mut vel = vec![vec![0.0; n]; k];
    let mut force = vec![vec![0.0; n]; k];
    for i in 0..n {
        for c in 0..k {
            let x = outputs[i * 2 * k + 2 * c];
            let xdot = states[i * 2 * k + 2 * c + 1];
            let in_contact = env.penetrating(x);
            let f = if env.enabled && c == env.axis {
                match config.contact_law {
                    ContactLaw::Unilateral => -contact_force(env, x, xdot),
                    ContactLaw::Linear => outputs[i * 2 * k + 2 * c + 1] - env.stiffness * env.surface_height,
                }
            } else {
                0.0
            };
            let y = OutputSample { position: x, force: f };
            let y = match sampler.as_mut() {
                Some(s) => s.stochastic_output(y, in_contact && c == env.axis, env.stiffness),
                None => y,
            };
            pos[c][i] = y.position;
            vel[c][i] = xdot;
            force[c][i] = y.force;
        }
    }

    Ok(SessionRecord {
        session_id: String::from("synthetic"),
        schema_version: SCHEMA_VERSION,
        rate_hz: input.rate_hz,
        axes: AxesDescriptor {
            positions: input.n_positions(),
            rotations: input.n_rotations(),
        },
        input: input.clone(),
        output: OutputSamples {
            t: input.t.clone(),
            pos,
            vel,
            force,
        },
        env: *env,
        source: Source::Synthetic,
        notes: String::new(),
        aborted: false,
        synthetic: Some(SyntheticTruth {
            model: model.clone(),
            config: config.clone(),
        }),
    })
}

pub(crate) mod rows {
    use alloc::vec::Vec;
    use nalgebra::{DMatrix, Scalar};
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<T, S>(m: &DMatrix<T>, s: S) -> Result<S::Ok, S::Error>
    where
        T: Scalar + Serialize,
        S: Serializer,
    {
        let rows: Vec<Vec<&T>> = (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| &m[(r, c)]).collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<DMatrix<T>, D::Error>
    where
        T: Scalar + Deserialize<'de>,
        D: Deserializer<'de>,
    {
        let rows: Vec<Vec<T>> = Vec::deserialize(d)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_row_iterator(nrows, ncols, rows.into_iter().flatten()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{gen_fourier, uniform_timestamps, FourierComponent, FourierSpec, Provenance};

    fn unit() -> FollowerParams {
        FollowerParams::new(1.0, 1.0, 1.0).unwrap()
    }

    fn mat(m: &DMatrix<f64>) -> Vec<f64> {
        row_major(m)
    }

    fn constant_input(n: usize, value: f64, rate: f64) -> Trajectory {
        let mut pos = vec![value; n];
        pos[0] = 0.0;
        Trajectory {
            rate_hz: rate,
            t: uniform_timestamps(n, rate),
            pos: vec![pos],
            vel: vec![vec![0.0; n]],
            rot: vec![],
            ang_vel: vec![],
            provenance: Provenance::External,
        }
    }

    #[test]
    fn unit_parameters() {
        let m = build_state_space(&unit(), &EnvParams::free_space()).unwrap();
        assert_eq!(mat(&m.a), vec![0.0, 1.0, -1.0, -1.0]);
        assert_eq!(mat(&m.b), vec![0.0, 0.0, 1.0, 1.0]);
        assert_eq!(mat(&m.c), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(mat(&m.d), vec![0.0; 4]);
    }

    #[test]
    fn scaled_parameters_with_environment() {
        let p = FollowerParams::new(2.0, 4.0, 8.0).unwrap();
        let env = EnvParams::surface(1000.0, 10.0, 0.0, 0).unwrap();
        let m = build_state_space(&p, &env).unwrap();
        assert_eq!(mat(&m.a), vec![0.0, 1.0, -4.0, -2.0]);
        assert_eq!(mat(&m.b), vec![0.0, 0.0, 4.0, 2.0]);
        assert_eq!(mat(&m.c), vec![1.0, 0.0, 1000.0, 10.0]);
    }

    #[test]
    fn rejects_non_positive_parameters() {
        assert!(FollowerParams::new(0.0, 1.0, 1.0).is_err());
        assert!(FollowerParams::new(1.0, -1.0, 1.0).is_err());
        let bad = FollowerParams { mass: 1.0, damping: 1.0, stiffness: f64::NAN };
        assert!(build_state_space(&bad, &EnvParams::free_space()).is_err());
    }

    #[test]
    fn human_scale_parameters_are_representable() {
        // fitted A entries average a few hundred in magnitude
        let p = FollowerParams::new(1.0, 20.0, 270.0).unwrap();
        let m = build_state_space(&p, &EnvParams::free_space()).unwrap();
        assert!((m.a[(1, 0)] + 270.0).abs() < 1e-12);
        assert!(m.is_stable());
    }

    #[test]
    fn block_diagonal_identity_case() {
        let m = build_state_space(&unit(), &EnvParams::free_space()).unwrap();
        let bd = block_diagonal(core::slice::from_ref(&m)).unwrap();
        assert_eq!(bd, m);
        assert!(block_diagonal(&[]).is_err());
    }

    #[test]
    fn block_diagonal_two_axes() {
        let m1 = build_state_space(&unit(), &EnvParams::free_space()).unwrap();
        let m2 = build_state_space(&FollowerParams::new(2.0, 4.0, 8.0).unwrap(), &EnvParams::free_space()).unwrap();
        let bd = block_diagonal(&[m1, m2]).unwrap();
        #[rustfmt::skip]
        let expected = vec![
            0.0, 1.0, 0.0, 0.0,
            -1.0, -1.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
            0.0, 0.0, -4.0, -2.0,
        ];
        assert_eq!(mat(&bd.a), expected);
        assert_eq!(bd.dof, 2);
    }

    #[test]
    fn block_diagonal_mask_by_enumeration() {
        let m = build_state_space(&unit(), &EnvParams::free_space()).unwrap();
        let bd = block_diagonal(&vec![m; 6]).unwrap();
        assert_eq!(bd.a.shape(), (12, 12));
        let mut off = 0;
        for r in 0..12 {
            for c in 0..12 {
                let same_block = r / 2 == c / 2;
                if !same_block {
                    off += 1;
                    assert_eq!(bd.a[(r, c)], 0.0);
                    assert_eq!(bd.mask.a[(r, c)], EntryClass::OffBlock);
                } else {
                    assert_ne!(bd.mask.a[(r, c)], EntryClass::OffBlock);
                }
            }
        }
        assert_eq!(off, 120);
        assert_eq!(off, 4 * (36 - 6));
        assert_eq!(bd.mask.off_block_count(), 3 * 120);
    }

    #[test]
    fn contact_force_cases() {
        let env = EnvParams::surface(1000.0, 50.0, 0.0, 0).unwrap();
        assert_eq!(contact_force(&env, 0.05, -1.0), 0.0);
        let still = EnvParams::surface(1000.0, 0.0, 0.0, 0).unwrap();
        assert!((contact_force(&still, -0.01, 0.0) - 10.0).abs() < 1e-12);
        // penetrating at 0.1 m/s means moving downward: ẋ = -0.1
        let f = contact_force(&env, -0.01, -0.1);
        let spring = 1000.0 * 0.01;
        let damper = 50.0 * 0.1;
        assert!((f - (spring + damper)).abs() < 1e-12);
        assert!((f - 15.0).abs() < 1e-12);
        // withdrawing fast: no adhesion
        assert_eq!(contact_force(&env, -0.001, 1.0), 0.0);
    }

    #[test]
    fn zero_sigma_leaves_output_unchanged() {
        let mut s = NoiseSampler::new(NoiseModel { sigma_pos: 0.0, seed: 1, force_noise_enabled: true }).unwrap();
        let y = OutputSample { position: 0.123, force: -4.0 };
        assert_eq!(s.stochastic_output(y, true, 1000.0), y);
    }

    #[test]
    fn force_noise_only_in_contact() {
        let mut s = NoiseSampler::new(NoiseModel::human(3)).unwrap();
        for _ in 0..100 {
            let y = OutputSample { position: 0.0, force: -2.5 };
            assert_eq!(s.stochastic_output(y, false, 1000.0).force, -2.5);
        }
        let y = OutputSample { position: 0.0, force: -2.5 };
        assert_ne!(s.stochastic_output(y, true, 1000.0).force, -2.5);
    }

    #[test]
    fn position_noise_has_configured_std() {
        let mut s = NoiseSampler::new(NoiseModel::human(11)).unwrap();
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| s.stochastic_output(OutputSample { position: 0.0, force: 0.0 }, false, 0.0).position)
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
        assert!((var.sqrt() / 0.007 - 1.0).abs() < 0.02);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let m = build_state_space(&unit(), &EnvParams::free_space()).unwrap();
        let tr = constant_input(500, 0.0, 100.0);
        let rec = simulate(&m, &tr, &SimConfig::default()).unwrap();
        assert!(rec.output.pos[0].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn step_response_settles_to_unit_dc_gain() {
        // unit params: time constant 1/(ζωn) = 2 s, so 20 time constants = 40 s
        let m = build_state_space(&unit(), &EnvParams::free_space()).unwrap();
        let tr = constant_input(4001, 1.0, 100.0);
        let rec = simulate(&m, &tr, &SimConfig { initial: InitialState::Zero, ..SimConfig::default() }).unwrap();
        let last = *rec.output.pos[0].last().unwrap();
        assert!((last - 1.0).abs() < 1e-6, "{last}");
        // closed-form oracle for k / (m s² + b s + k), position step held from t = dt
        let wd = (0.75f64).sqrt();
        let closed = |t: f64| 1.0 - (-t / 2.0).exp() * ((wd * t).cos() + (0.5 / wd) * (wd * t).sin());
        for i in [100usize, 250, 700, 1500] {
            let t = (i - 1) as f64 * 0.01;
            assert!((rec.output.pos[0][i] - closed(t)).abs() < 1e-9, "sample {i}");
        }
    }

    #[test]
    fn sinusoid_matches_frequency_response() {
        let p = FollowerParams::new(1.0, 20.0, 270.0).unwrap();
        let m = build_state_space(&p, &EnvParams::free_space()).unwrap();
        let spec = FourierSpec {
            axes: vec![vec![FourierComponent { amplitude: 0.1, frequency_hz: 0.2, phase: 0.0 }]],
            duration_s: 40.0,
            rate_hz: 100.0,
            max_frequency_hz: 0.63,
        };
        let tr = gen_fourier(&spec).unwrap();
        let rec = simulate(&m, &tr, &SimConfig::default()).unwrap();
        let w = 2.0 * core::f64::consts::PI * 0.2;
        let g = p.frequency_response(w);
        // least-squares fit of a sin + b cos on the last 20 s (4 full periods)
        let (mut ss, mut sc, mut cc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 2000..4000 {
            let t = tr.t[i];
            let (s, c) = ((w * t).sin(), (w * t).cos());
            let y = rec.output.pos[0][i];
            ss += s * s;
            sc += s * c;
            cc += c * c;
            ys += y * s;
            yc += y * c;
        }
        let det = ss * cc - sc * sc;
        let a = (ys * cc - yc * sc) / det;
        let b = (yc * ss - ys * sc) / det;
        // y ≈ Im(0.1 Ĝ e^{jωt}) = 0.1 (Re Ĝ sin + Im Ĝ cos)
        let measured = Complex64::new(a, b) / 0.1;
        assert!((measured.norm() / g.norm() - 1.0).abs() < 0.01);
        assert!((measured - g).norm() / g.norm() < 0.01);
    }

    #[test]
    fn simulation_rejects_bad_inputs() {
        let m = build_state_space(&unit(), &EnvParams::free_space()).unwrap();
        let tr = constant_input(100, 1.0, 100.0);
        assert!(simulate(&m, &tr, &SimConfig { dt: 0.0, ..SimConfig::default() }).is_err());
        assert!(matches!(
            simulate(&m, &tr, &SimConfig { dt: 0.02, ..SimConfig::default() }),
            Err(Error::NonUniformTimestamps { .. })
        ));
        let mut jitter = tr.clone();
        jitter.t[50] += 0.003;
        assert!(matches!(simulate(&m, &jitter, &SimConfig::default()), Err(Error::NonUniformTimestamps { index: 50 })));
        let mut unstable = m.clone();
        unstable.a[(1, 1)] = 1.0;
        assert!(matches!(simulate(&unstable, &tr, &SimConfig::default()), Err(Error::Unstable(_))));
    }

    #[test]
    fn noisy_simulation_is_reproducible() {
        let m = build_state_space(&unit(), &EnvParams::free_space()).unwrap();
        let tr = constant_input(300, 0.2, 100.0);
        let cfg = SimConfig { noise: Some(NoiseModel::human(5)), ..SimConfig::default() };
        let a = simulate(&m, &tr, &cfg).unwrap();
        let b = simulate(&m, &tr, &cfg).unwrap();
        assert_eq!(a.output, b.output);
        // internal state (recorded velocity) is unaffected by output noise
        let clean = simulate(&m, &tr, &SimConfig::default()).unwrap();
        assert_eq!(a.output.vel, clean.output.vel);
    }

    #[test]
    fn contact_produces_pushing_force() {
        let p = FollowerParams::new(1.0, 20.0, 270.0).unwrap();
        let env = EnvParams::surface(500.0, 5.0, -0.02, 0).unwrap();
        let m = build_state_space(&p, &env).unwrap();
        let spec = FourierSpec {
            axes: vec![vec![FourierComponent { amplitude: 0.05, frequency_hz: 0.3, phase: 0.0 }]],
            duration_s: 10.0,
            rate_hz: 100.0,
            max_frequency_hz: 0.63,
        };
        let tr = gen_fourier(&spec).unwrap();
        let rec = simulate(&m, &tr, &SimConfig { env, ..SimConfig::default() }).unwrap();
        for i in 0..tr.len() {
            let x = rec.output.pos[0][i];
            let f = rec.output.force[0][i];
            assert!(f <= 0.0);
            if x >= -0.02 {
                assert_eq!(f, 0.0);
            }
        }
        assert!(rec.output.force[0].iter().any(|&f| f < -1.0));
        let lin = simulate(&m, &tr, &SimConfig { env, contact_law: ContactLaw::Linear, ..SimConfig::default() }).unwrap();
        for i in 0..tr.len() {
            let (x, v) = (lin.output.pos[0][i], lin.output.vel[0][i]);
            assert!((lin.output.force[0][i] - (500.0 * (x + 0.02) + 5.0 * v)).abs() < 1e-9);
        }
    }
}

#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::SymmetricEigen;

use super::solver::{solve, Problem};
use super::{check_record, rms_percent_error, FitInitialState, FitOptions, FitResult, FittedModel, MIN_FIT_SECONDS};
use crate::error::{invalid, Error, Result};
use crate::model::{build_state_space, contact_force, DiscreteModel, EnvParams, FollowerParams};
use crate::record::SessionRecord;

struct StructuredProblem<'a> {
    inputs: Vec<f64>,
    measured: &'a [f64],
    force: Option<(&'a [f64], f64)>,
    env: EnvParams,
    x0: [f64; 2],
    dt: f64,
    mass: f64,
    fix_mass: bool,
    norm: f64,
}

impl StructuredProblem<'_> {
    fn params(&self, theta: &[f64]) -> FollowerParams {
        if self.fix_mass {
            FollowerParams { mass: self.mass, damping: theta[0].exp(), stiffness: theta[1].exp() }
        } else {
            FollowerParams { mass: theta[0].exp(), damping: theta[1].exp(), stiffness: theta[2].exp() }
        }
    }

    fn encode(&self, p: &FollowerParams) -> Vec<f64> {
        if self.fix_mass {
            vec![p.damping.ln(), p.stiffness.ln()]
        } else {
            vec![p.mass.ln(), p.damping.ln(), p.stiffness.ln()]
        }
    }

    /// Predicted `(position, velocity)` or `None` for unusable parameters.
    fn predict(&self, params: &FollowerParams) -> Option<(Vec<f64>, Vec<f64>)> {
        let model = build_state_space(params, &EnvParams::free_space()).ok()?;
        let disc = DiscreteModel::new(&model, self.dt);
        let (states, outputs) = disc.run(&self.x0, &self.inputs);
        let pos: Vec<f64> = outputs.iter().step_by(2).copied().collect();
        let vel: Vec<f64> = states.iter().skip(1).step_by(2).copied().collect();
        Some((pos, vel))
    }
}

impl Problem for StructuredProblem<'_> {
    fn n_params(&self) -> usize {
        if self.fix_mass {
            2
        } else {
            3
        }
    }

    fn residuals(&self, theta: &[f64], out: &mut Vec<f64>) {
        let rows = self.measured.len() * if self.force.is_some() { 2 } else { 1 };
        let Some((pos, vel)) = self.predict(&self.params(theta)) else {
            out.resize(rows, f64::INFINITY);
            return;
        };
        out.extend(pos.iter().zip(self.measured).map(|(p, m)| (p - m) * self.norm));
        if let Some((force, w)) = self.force {
            for i in 0..pos.len() {
                let f = -contact_force(&self.env, pos[i], vel[i]);
                out.push(w * (f - force[i]) * self.norm);
            }
        }
    }
}

/// Lowest-cost point of a log grid over `k/m` and damping ratio at the
/// initial mass.
fn grid_start(problem: &StructuredProblem, init: &FollowerParams) -> FollowerParams {
    let mut best = (f64::INFINITY, *init);
    let mut residuals = Vec::new();
    for i in 0..=12 {
        let kf = 10f64.powf(-1.0 + i as f64 / 3.0);
        for zeta in [0.2, 0.5, 1.0, 2.0] {
            let m = if problem.fix_mass { problem.mass } else { init.mass };
            let candidate = FollowerParams { mass: m, damping: 2.0 * zeta * kf.sqrt() * m, stiffness: kf * m };
            residuals.clear();
            problem.residuals(&problem.encode(&candidate), &mut residuals);
            let cost: f64 = residuals.iter().map(|r| r * r).sum();
            if cost < best.0 {
                best = (cost, candidate);
            }
        }
    }
    best.1
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|v| *v == x[0])
}

/// Fits `(m, b, k)` of one axis in log-space, which keeps them positive.
pub fn fit_structured(
    record: &SessionRecord,
    axis: usize,
    init: &FollowerParams,
    opts: &FitOptions,
) -> Result<FitResult> {
    opts.validate()?;
    init.validate()?;
    check_record(record, MIN_FIT_SECONDS)?;
    if axis >= record.n_channels() {
        return Err(invalid("axis", format!("axis {axis} out of range for {} channels", record.n_channels())));
    }
    let (u_pos, u_vel) = record.input.channel(axis);
    if is_constant(u_pos) && is_constant(u_vel) {
        return Err(Error::RankDeficient(format!("input on axis {axis} is constant")));
    }
    let measured = &record.output.pos[axis];
    let x0 = match opts.initial_state {
        FitInitialState::Measured => [measured[0], record.output.vel[axis][0]],
        FitInitialState::InputAligned => [u_pos[0], 0.0],
    };
    let use_force = opts.force_weight > 0.0 && record.env.enabled && record.env.axis == axis;
    let problem = StructuredProblem {
        inputs: u_pos.iter().zip(u_vel).flat_map(|(p, v)| [*p, *v]).collect(),
        measured,
        force: use_force.then(|| (record.output.force[axis].as_slice(), opts.force_weight.sqrt())),
        env: record.env,
        x0,
        dt: record.dt(),
        mass: init.mass,
        fix_mass: opts.fix_mass,
        norm: 1.0 / (measured.len() as f64).sqrt(),
    };
    let theta0 = problem.encode(init);
    let mut sol = solve(&problem, &theta0, opts);
    if !sol.termination.converged() {
        // A far start can slide into the stiff, perfectly tracking valley;
        // restart from the best point of a coarse grid and keep the better.
        let restart = solve(&problem, &problem.encode(&grid_start(&problem, init)), opts);
        if restart.termination.converged() || restart.cost < sol.cost {
            sol = restart;
        }
    }

    if sol.iterations > 0 || !sol.termination.converged() {
        let eig = SymmetricEigen::new(sol.initial_normal_matrix.clone()).eigenvalues;
        let max = eig.amax();
        let min = eig.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        if max == 0.0 || min / max < 1e-14 {
            return Err(Error::RankDeficient(format!(
                "normal matrix on axis {axis} is singular (eigenvalues {min:e}..{max:e})"
            )));
        }
    }

    let params = problem.params(&sol.theta);
    params.validate()?;
    let (predicted, _) = problem
        .predict(&params)
        .ok_or_else(|| Error::Degenerate("fitted parameters cannot be simulated".into()))?;
    let rms = rms_percent_error(measured, &predicted)?;
    let residuals = measured.iter().zip(&predicted).map(|(m, p)| m - p).collect();
    Ok(FitResult {
        model: FittedModel::Structured { axis, params },
        rms_percent_error: vec![rms],
        iterations: sol.iterations,
        converged: sol.termination.converged(),
        termination: sol.termination,
        final_cost: sol.cost,
        cost_history: sol.cost_history,
        residuals: vec![residuals],
        predicted: vec![predicted],
    })
}

/// Noise-free position response of `params` to one channel of `record`.
pub fn predict_position(
    record: &SessionRecord,
    axis: usize,
    params: &FollowerParams,
    initial_state: FitInitialState,
) -> Result<Vec<f64>> {
    params.validate()?;
    if axis >= record.n_channels() || record.is_empty() {
        return Err(invalid("axis", format!("axis {axis} out of range for {} channels", record.n_channels())));
    }
    let (u_pos, u_vel) = record.input.channel(axis);
    let x0 = match initial_state {
        FitInitialState::Measured => [record.output.pos[axis][0], record.output.vel[axis][0]],
        FitInitialState::InputAligned => [u_pos[0], 0.0],
    };
    let model = build_state_space(params, &EnvParams::free_space())?;
    let inputs: Vec<f64> = u_pos.iter().zip(u_vel).flat_map(|(p, v)| [*p, *v]).collect();
    let (_, outputs) = DiscreteModel::new(&model, record.dt()).run(&x0, &inputs);
    Ok(outputs.iter().step_by(2).copied().collect())
}

/// Structured fit of every channel. `init` holds one guess per channel, or a
/// single guess used for all.
pub fn fit_all_axes(record: &SessionRecord, init: &[FollowerParams], opts: &FitOptions) -> Result<Vec<FitResult>> {
    let k = record.n_channels();
    if init.len() != 1 && init.len() != k {
        return Err(Error::DimensionMismatch(format!("{} initial guesses for {k} channels", init.len())));
    }
    (0..k)
        .map(|axis| fit_structured(record, axis, &init[if init.len() == 1 { 0 } else { axis }], opts))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate, NoiseModel, SimConfig};
    use crate::trajectory::{gen_filtered_noise, NoiseTrajSpec};

    fn record(p: FollowerParams, seconds: f64, noise: Option<NoiseModel>) -> SessionRecord {
        let mut spec = NoiseTrajSpec::new(21, vec![(-0.15, 0.15)]);
        spec.duration_s = seconds;
        let tr = gen_filtered_noise(&spec).unwrap();
        let m = build_state_space(&p, &EnvParams::free_space()).unwrap();
        simulate(&m, &tr, &SimConfig { noise, ..SimConfig::default() }).unwrap()
    }

    #[test]
    fn recovers_parameters_noise_free() {
        let truth = FollowerParams::new(1.0, 20.0, 270.0).unwrap();
        let rec = record(truth, 60.0, None);
        let init = FollowerParams::new(1.0, 8.0, 100.0).unwrap();
        let fit = fit_structured(&rec, 0, &init, &FitOptions::default()).unwrap();
        let p = fit.params().unwrap();
        assert!(fit.converged, "{:?}", fit.termination);
        assert!((p.damping / 20.0 - 1.0).abs() < 1e-3, "{p:?}");
        assert!((p.stiffness / 270.0 - 1.0).abs() < 1e-3, "{p:?}");
        for w in fit.cost_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn slow_overdamped_follower_from_a_far_start() {
        let truth = FollowerParams::new(3.87, 2.0 * 0.91 * 4.77f64.sqrt() * 3.87, 4.77 * 3.87).unwrap();
        let rec = record(truth, 240.0, None);
        let fit = fit_structured(&rec, 0, &FollowerParams::new(1.0, 10.0, 100.0).unwrap(), &FitOptions::default()).unwrap();
        let p = fit.params().unwrap();
        assert!(fit.converged, "{:?}", fit.termination);
        assert!((p.stiffness_per_mass() / truth.stiffness_per_mass() - 1.0).abs() < 1e-3, "{p:?}");
        assert!((p.damping_per_mass() / truth.damping_per_mass() - 1.0).abs() < 1e-3, "{p:?}");
    }

    #[test]
    fn truth_is_a_fixed_point() {
        let truth = FollowerParams::new(1.0, 20.0, 270.0).unwrap();
        let rec = record(truth, 30.0, None);
        let fit = fit_structured(&rec, 0, &truth, &FitOptions::default()).unwrap();
        assert!(fit.iterations <= 2);
        assert!(fit.final_cost < 1e-20);
        assert!(fit.converged);
    }

    #[test]
    fn constant_input_is_rank_deficient() {
        let truth = FollowerParams::new(1.0, 20.0, 270.0).unwrap();
        let mut rec = record(truth, 20.0, None);
        rec.input.pos[0].iter_mut().for_each(|x| *x = 0.1);
        rec.input.vel[0].iter_mut().for_each(|x| *x = 0.0);
        let init = FollowerParams::new(1.0, 8.0, 100.0).unwrap();
        assert!(matches!(fit_structured(&rec, 0, &init, &FitOptions::default()), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn short_record_is_rejected() {
        let truth = FollowerParams::new(1.0, 20.0, 270.0).unwrap();
        let rec = record(truth, 20.0, None).slice(0, 500);
        assert!(matches!(
            fit_structured(&rec, 0, &truth, &FitOptions::default()),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn regularization_limits() {
        let truth = FollowerParams::new(1.0, 6.0, 40.0).unwrap();
        let rec = record(truth, 30.0, None);
        let init = FollowerParams::new(1.0, 3.0, 20.0).unwrap();
        let pinned = fit_structured(&rec, 0, &init, &FitOptions { regularization_weight: 1e9, ..FitOptions::default() }).unwrap();
        let p = pinned.params().unwrap();
        assert!((p.damping / 3.0 - 1.0).abs() < 1e-3 && (p.stiffness / 20.0 - 1.0).abs() < 1e-3);
        let free = fit_structured(&rec, 0, &init, &FitOptions { regularization_weight: 0.0, ..FitOptions::default() }).unwrap();
        let p = free.params().unwrap();
        assert!((p.damping / 6.0 - 1.0).abs() < 1e-6 && (p.stiffness / 40.0 - 1.0).abs() < 1e-6, "{p:?}");
    }
}

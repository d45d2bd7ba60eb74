//! Gauss-Newton least squares with adaptive Levenberg damping and a
//! central finite-difference Jacobian.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::FitOptions;

/// A least-squares problem: residuals as a function of the parameter vector.
pub(crate) trait Problem {
    fn n_params(&self) -> usize;

    /// Writes the residual vector into `out` (cleared by the caller).
    fn residuals(&self, theta: &[f64], out: &mut Vec<f64>);

    /// Scale of parameter `j` used by the regularization term.
    fn regularization_scale(&self, _j: usize) -> f64 {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Cost is zero to machine precision.
    ExactFit,
    GradientTolerance,
    StepTolerance,
    /// Relative cost decrease, achieved or predicted, fell below the cost tolerance.
    CostStagnation,
    MaxIterations,
    /// Damping exceeded its cap without finding a descent step.
    DampingCap,
    /// Converged, but the fitted system violates the stability constraint.
    Unstable,
}

impl Termination {
    pub fn converged(self) -> bool {
        matches!(
            self,
            Termination::ExactFit
                | Termination::GradientTolerance
                | Termination::StepTolerance
                | Termination::CostStagnation
        )
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Solution {
    pub theta: Vec<f64>,
    pub cost: f64,
    pub cost_history: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    /// `JᵀJ` of the regularized problem at the first iterate.
    pub initial_normal_matrix: DMatrix<f64>,
}

struct Evaluator<'a, P: Problem> {
    problem: &'a P,
    theta0: &'a [f64],
    reg_sqrt: f64,
    buf: Vec<f64>,
}

impl<'a, P: Problem> Evaluator<'a, P> {
    fn eval(&mut self, theta: &[f64]) -> Vec<f64> {
        self.buf.clear();
        self.problem.residuals(theta, &mut self.buf);
        let mut r = core::mem::take(&mut self.buf);
        if self.reg_sqrt > 0.0 {
            for (j, (t, t0)) in theta.iter().zip(self.theta0).enumerate() {
                r.push(self.reg_sqrt * (t - t0) / self.problem.regularization_scale(j));
            }
        }
        r
    }

    fn recycle(&mut self, v: Vec<f64>) {
        self.buf = v;
    }
}

fn cost_of(r: &[f64]) -> f64 {
    let c: f64 = r.iter().map(|v| v * v).sum();
    if c.is_finite() {
        c
    } else {
        f64::INFINITY
    }
}

fn jacobian<P: Problem>(ev: &mut Evaluator<'_, P>, theta: &[f64], rows: usize, rel_step: f64) -> DMatrix<f64> {
    let n = theta.len();
    let mut j = DMatrix::<f64>::zeros(rows, n);
    let mut probe = theta.to_vec();
    for col in 0..n {
        let h = rel_step * theta[col].abs().max(1.0);
        probe[col] = theta[col] + h;
        let plus = ev.eval(&probe);
        probe[col] = theta[col] - h;
        let minus = ev.eval(&probe);
        probe[col] = theta[col];
        for (row, (p, m)) in plus.iter().zip(&minus).enumerate().take(rows) {
            j[(row, col)] = (p - m) / (2.0 * h);
        }
        ev.recycle(plus);
    }
    j
}

/// Solves `(H + μ·diag(H)) s = −g` (Marquardt scaling).
fn damped_step(h: &DMatrix<f64>, g: &DVector<f64>, damping: f64, diag_floor: f64) -> Option<DVector<f64>> {
    let mut lhs = h.clone();
    for i in 0..h.nrows() {
        lhs[(i, i)] += damping * h[(i, i)].max(diag_floor);
    }
    lhs.cholesky().map(|ch| ch.solve(&(-g)))
}

pub(crate) fn solve<P: Problem>(problem: &P, theta0: &[f64], opts: &FitOptions) -> Solution {
    let n = problem.n_params();
    debug_assert_eq!(theta0.len(), n);
    let mut ev = Evaluator {
        problem,
        theta0,
        reg_sqrt: opts.regularization_weight.sqrt(),
        buf: Vec::new(),
    };
    let mut theta = theta0.to_vec();
    let mut r = ev.eval(&theta);
    let mut cost = cost_of(&r);
    let mut history = vec![cost];
    let mut damping = opts.initial_damping;
    let mut iterations = 0;
    let mut initial_normal = None;

    let termination = loop {
        if cost <= f64::MIN_POSITIVE {
            break Termination::ExactFit;
        }
        if iterations >= opts.max_iterations {
            break Termination::MaxIterations;
        }
        let jac = jacobian(&mut ev, &theta, r.len(), opts.fd_relative_step);
        let h = jac.tr_mul(&jac);
        let g = jac.tr_mul(&DVector::from_column_slice(&r));
        if initial_normal.is_none() {
            initial_normal = Some(h.clone());
        }
        // Largest cosine between the residual and a Jacobian column.
        let r_norm = cost.sqrt();
        let cosine = (0..n)
            .map(|j| {
                let col = h[(j, j)].sqrt();
                if col > 0.0 {
                    g[j].abs() / (col * r_norm)
                } else {
                    0.0
                }
            })
            .fold(0.0f64, f64::max);
        if cosine <= opts.gradient_tolerance {
            break Termination::GradientTolerance;
        }
        let diag_floor = h.diagonal().amax().max(f64::MIN_POSITIVE) * 1e-12;
        if let Some(gn) = damped_step(&h, &g, 1e-12, diag_floor) {
            // Reduction promised by the (barely damped) Gauss-Newton model.
            // Rounding in an ill-conditioned solve can make it non-positive,
            // which says nothing about convergence.
            let predicted = -2.0 * g.dot(&gn) - (&h * &gn).dot(&gn);
            if predicted > 0.0 && predicted <= opts.cost_tolerance * cost {
                break Termination::CostStagnation;
            }
        }

        let mut accepted = None;
        while damping <= opts.max_damping {
            let Some(step) = damped_step(&h, &g, damping, diag_floor) else {
                damping *= 4.0;
                continue;
            };
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + s).collect();
            let r_trial = ev.eval(&trial);
            let c_trial = cost_of(&r_trial);
            if c_trial < cost {
                damping = (damping / 3.0).max(1e-15);
                accepted = Some((trial, r_trial, c_trial, step.amax()));
                break;
            }
            ev.recycle(r_trial);
            damping *= 4.0;
        }
        let Some((trial, r_trial, c_trial, step_max)) = accepted else {
            break Termination::DampingCap;
        };
        let decrease = cost - c_trial;
        let theta_max = theta.iter().fold(0.0f64, |m, t| m.max(t.abs()));
        theta = trial;
        ev.recycle(core::mem::replace(&mut r, r_trial));
        cost = c_trial;
        history.push(cost);
        iterations += 1;
        if step_max <= opts.step_tolerance * (1.0 + theta_max) {
            break Termination::StepTolerance;
        }
        if decrease <= opts.cost_tolerance * cost {
            break Termination::CostStagnation;
        }
    };

    let initial_normal_matrix = initial_normal.unwrap_or_else(|| DMatrix::zeros(n, n));
    Solution {
        theta,
        cost,
        cost_history: history,
        iterations,
        termination,
        initial_normal_matrix,
    }
}

//! Maximization of the finite-dimensional Lagrangian dual
//! `sup_lambda { lambda_0 - Sum_j P_j phi*(lambda^T g(x_j)) }`
//! by damped Newton with Levenberg fallback, Armijo line search and a
//! fraction-to-boundary rule keeping every `lambda^T g(x_j)` strictly
//! inside dom phi*. The primal projection is recovered from the optimal
//! multipliers through `q*_j = (phi*)'(lambda^T g(x_j))`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics;
use crate::divergence::INF;
use crate::measure::divergence_of_density;
use crate::problem::{CandidateMeasure, MomentProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    /// The supremum is approached at the boundary of dom phi*; the primal
    /// characterization does not apply and no primal is fabricated.
    Boundary,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid option: {0}")]
    InvalidOptions(String),
    #[error("primal recovery requires a converged dual solution, got {0:?}")]
    NotConverged(SolveStatus),
    #[error("candidate is infeasible: residual max-norm {0:.3e}")]
    Infeasible(f64),
    #[error("dual representation requires finite divergence, got {0}")]
    InfiniteDivergence(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Armijo sufficient-increase constant.
    pub armijo: f64,
    /// Fraction-to-boundary factor: a step may consume at most this
    /// fraction of the distance to the dual-domain boundary.
    pub boundary_fraction: f64,
    pub objective_cap: f64,
    pub lambda_cap: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            armijo: 1e-4,
            boundary_fraction: 0.99,
            objective_cap: 1e12,
            lambda_cap: 1e8,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.tol > 0.0) {
            return Err(SolverError::InvalidOptions(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(SolverError::InvalidOptions("max_iter must be >= 1".into()));
        }
        if !(self.boundary_fraction > 0.0 && self.boundary_fraction < 1.0) {
            return Err(SolverError::InvalidOptions(format!(
                "boundary_fraction must be in (0, 1), got {}",
                self.boundary_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DualSolution {
    pub lambda: DVector<f64>,
    pub dual_value: f64,
    pub status: SolveStatus,
    pub grad_norm: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct ProjectionReport {
    /// Recovered density dQ*/dP over the atoms of P.
    pub q_star: Vec<f64>,
    pub primal_value: f64,
    pub dual_value: f64,
    pub gap: f64,
    pub characterization_residual: f64,
    pub status: SolveStatus,
}

/// `lambda_0 - Sum_j P_j phi*(lambda^T g(x_j))`; `-inf` when some
/// argument leaves dom phi*.
pub fn dual_objective(problem: &MomentProblem, lambda: &DVector<f64>) -> f64 {
    linear_term_objective(problem, lambda, None)
}

fn linear_term_objective(
    problem: &MomentProblem,
    lambda: &DVector<f64>,
    b: Option<&DVector<f64>>,
) -> f64 {
    let lin = match b {
        Some(b) => b.dot(lambda),
        None => lambda[0],
    };
    let fam = problem.family();
    let p = problem.p().weights();
    let mut acc = 0.0;
    for j in 0..problem.num_atoms() {
        let c = fam.conj(problem.lambda_dot_g(lambda, j));
        if c == INF {
            return -INF;
        }
        acc += p[j] * c;
    }
    lin - acc
}

/// Gradient of the dual objective; errors when some `lambda^T g(x_j)` is
/// not strictly inside (a_conj, b_conj).
pub fn dual_gradient(
    problem: &MomentProblem,
    lambda: &DVector<f64>,
) -> Result<DVector<f64>, crate::divergence::BoundaryError> {
    let fam = problem.family();
    let p = problem.p().weights();
    let mut grad = DVector::zeros(problem.num_constraints() + 1);
    grad[0] = 1.0;
    for j in 0..problem.num_atoms() {
        let t = problem.lambda_dot_g(lambda, j);
        let d = fam.conj_prime(t)?;
        grad.axpy(-p[j] * d, &problem.g_row(j), 1.0);
    }
    Ok(grad)
}

/// Hessian of the dual objective: negative semidefinite, negative
/// definite under the rank invariant wherever `(phi*)'' > 0` on supp P.
pub fn dual_hessian(
    problem: &MomentProblem,
    lambda: &DVector<f64>,
) -> Result<DMatrix<f64>, crate::divergence::BoundaryError> {
    let fam = problem.family();
    let p = problem.p().weights();
    let m = problem.num_constraints() + 1;
    let mut h = DMatrix::zeros(m, m);
    for j in 0..problem.num_atoms() {
        let t = problem.lambda_dot_g(lambda, j);
        let w = p[j] * fam.conj_second(t)?;
        let row = problem.g_row(j);
        h.syger(-w, &row, &row, 1.0);
    }
    // fill the upper triangle (syger touches the lower one)
    for r in 0..m {
        for c in (r + 1)..m {
            h[(r, c)] = h[(c, r)];
        }
    }
    Ok(h)
}

/// Maximizes the dual and reports the multiplier vector, value and status.
pub fn solve_dual(problem: &MomentProblem, opts: &SolverOptions) -> Result<DualSolution, SolverError> {
    opts.validate()?;
    Ok(maximize(problem, None, opts))
}

/// Shared Newton machinery: maximizes
/// `b^T lambda - Sum_j P_j phi*(lambda^T g(x_j))`, with `b = e_0` for the
/// projection dual.
fn maximize(problem: &MomentProblem, b: Option<&DVector<f64>>, opts: &SolverOptions) -> DualSolution {
    let fam = problem.family();
    let m = problem.num_constraints() + 1;
    let mut lambda: DVector<f64> = DVector::zeros(m);
    let mut obj = linear_term_objective(problem, &lambda, b);
    debug_assert!(obj.is_finite(), "lambda = 0 must be dual-domain interior");
    let mut grad_norm = INF;
    let mut iterations = 0;

    let grad_at = |lambda: &DVector<f64>| -> DVector<f64> {
        let mut g = match b {
            Some(b) => b.clone(),
            None => {
                let mut e0 = DVector::zeros(m);
                e0[0] = 1.0;
                e0
            }
        };
        let p = problem.p().weights();
        for j in 0..problem.num_atoms() {
            let t = problem.lambda_dot_g(lambda, j);
            let d = fam.conj_prime(t).expect("iterate left dom phi* interior");
            g.axpy(-p[j] * d, &problem.g_row(j), 1.0);
        }
        g
    };

    for iter in 0..opts.max_iter {
        iterations = iter + 1;
        if obj > opts.objective_cap || lambda.norm() > opts.lambda_cap {
            return DualSolution {
                lambda,
                dual_value: obj,
                status: SolveStatus::Unbounded,
                grad_norm,
                iterations,
            };
        }
        let grad = grad_at(&lambda);
        grad_norm = grad.norm();
        if grad_norm <= opts.tol {
            return DualSolution {
                lambda,
                dual_value: obj,
                status: SolveStatus::Converged,
                grad_norm,
                iterations,
            };
        }

        // M = -Hessian, positive semidefinite
        let mut m_mat = DMatrix::zeros(m, m);
        {
            let p = problem.p().weights();
            for j in 0..problem.num_atoms() {
                let t = problem.lambda_dot_g(&lambda, j);
                let w = p[j] * fam.conj_second(t).expect("iterate left dom phi* interior");
                let row = problem.g_row(j);
                m_mat.syger(w, &row, &row, 1.0);
            }
            for r in 0..m {
                for c in (r + 1)..m {
                    m_mat[(r, c)] = m_mat[(c, r)];
                }
            }
        }

        let mut mu = 0.0;
        let mut accepted = false;
        for _attempt in 0..10 {
            let mut damped = m_mat.clone();
            for d in 0..m {
                damped[(d, d)] += mu;
            }
            let chol = match damped.cholesky() {
                Some(c) => c,
                None => {
                    mu = if mu == 0.0 { 1e-10 } else { mu * 10.0 };
                    continue;
                }
            };
            let dir = chol.solve(&grad);
            let slope = grad.dot(&dir);
            if !slope.is_finite() || slope <= 0.0 {
                mu = if mu == 0.0 { 1e-10 } else { mu * 10.0 };
                continue;
            }
            let alpha_max = fraction_to_boundary(problem, &lambda, &dir, opts.boundary_fraction);
            let mut alpha = alpha_max.min(1.0);
            let mut found = false;
            for _bt in 0..60 {
                if alpha * dir.norm() < 1e-16 * (1.0 + lambda.norm()) {
                    break;
                }
                let trial = &lambda + alpha * &dir;
                let trial_obj = linear_term_objective(problem, &trial, b);
                if trial_obj >= obj + opts.armijo * alpha * slope {
                    lambda = trial;
                    obj = trial_obj;
                    found = true;
                    break;
                }
                alpha *= 0.5;
            }
            if found {
                accepted = true;
                break;
            }
            mu = if mu == 0.0 { 1e-10 } else { mu * 10.0 };
        }

        if !accepted {
            // a stalled line search with a near-zero gradient means the
            // remaining improvement is below double-precision resolution
            // of the objective
            let stall_tol = opts.tol.max(1e-8 * (1.0 + obj.abs() + lambda.norm()));
            let status = if grad_norm <= stall_tol {
                SolveStatus::Converged
            } else if near_boundary(problem, &lambda) {
                SolveStatus::Boundary
            } else {
                SolveStatus::IterationLimit
            };
            return DualSolution { lambda, dual_value: obj, status, grad_norm, iterations };
        }
    }

    let grad_norm = grad_at(&lambda).norm();
    let status = if grad_norm <= opts.tol.max(1e-8 * (1.0 + obj.abs() + lambda.norm())) {
        SolveStatus::Converged
    } else if near_boundary(problem, &lambda) {
        SolveStatus::Boundary
    } else {
        SolveStatus::IterationLimit
    };
    DualSolution { lambda, dual_value: obj, status, grad_norm, iterations }
}

fn fraction_to_boundary(
    problem: &MomentProblem,
    lambda: &DVector<f64>,
    dir: &DVector<f64>,
    fraction: f64,
) -> f64 {
    let fam = problem.family();
    let mut alpha = INF;
    for j in 0..problem.num_atoms() {
        let t = problem.lambda_dot_g(lambda, j);
        let dt = problem.lambda_dot_g(dir, j); // dir^T g(x_j)
        if fam.b_conj().is_finite() && dt > 0.0 {
            alpha = alpha.min(fraction * (fam.b_conj() - t) / dt);
        }
        if fam.a_conj().is_finite() && dt < 0.0 {
            alpha = alpha.min(fraction * (fam.a_conj() - t) / dt);
        }
    }
    alpha
}

fn near_boundary(problem: &MomentProblem, lambda: &DVector<f64>) -> bool {
    let fam = problem.family();
    for j in 0..problem.num_atoms() {
        let t = problem.lambda_dot_g(lambda, j);
        if fam.b_conj().is_finite() && fam.b_conj() - t < 1e-7 * (1.0 + fam.b_conj().abs()) {
            return true;
        }
        if fam.a_conj().is_finite() && t - fam.a_conj() < 1e-7 * (1.0 + fam.a_conj().abs()) {
            return true;
        }
    }
    false
}

/// Recovers the projection density from a converged dual solution and
/// fills value, gap and characterization residual.
pub fn recover_primal(
    problem: &MomentProblem,
    solution: &DualSolution,
) -> Result<ProjectionReport, SolverError> {
    if solution.status != SolveStatus::Converged {
        return Err(SolverError::NotConverged(solution.status));
    }
    let fam = problem.family();
    let q_star: Vec<f64> = (0..problem.num_atoms())
        .map(|j| {
            let t = problem.lambda_dot_g(&solution.lambda, j);
            fam.conj_prime(t).expect("converged iterate is dual-domain interior")
        })
        .collect();
    let primal_value = divergence_of_density(fam, &q_star, problem.p());
    let characterization_residual = diagnostics::characterization_residual(problem, &q_star)
        .unwrap_or(f64::NAN);
    Ok(ProjectionReport {
        gap: primal_value - solution.dual_value,
        q_star,
        primal_value,
        dual_value: solution.dual_value,
        characterization_residual,
        status: solution.status,
    })
}

/// `divergence(Q, P) - dual_objective(lambda)`; nonnegative up to slack
/// by weak duality. Rejects infeasible candidates.
pub fn duality_gap(
    problem: &MomentProblem,
    lambda: &DVector<f64>,
    q: &CandidateMeasure,
    feas_tol: f64,
) -> Result<f64, SolverError> {
    let r = problem.feasibility_residual(q);
    let worst = r.amax();
    if worst > feas_tol {
        return Err(SolverError::Infeasible(worst));
    }
    let qv: Vec<f64> = q.density().iter().copied().collect();
    let primal = divergence_of_density(problem.family(), &qv, problem.p());
    Ok(primal - dual_objective(problem, lambda))
}

/// Variational (dual) representation of a divergence over the span of the
/// constraint functions:
/// `sup_lambda { Sum_j Q_j lambda^T g(x_j) - Sum_j P_j phi*(lambda^T g(x_j)) }`.
/// Equals `divergence(Q, P)` when `phi'(dQ/dP)` lies in span{1, g_1..g_l}.
pub fn dual_representation(
    problem: &MomentProblem,
    q: &CandidateMeasure,
    opts: &SolverOptions,
) -> Result<(DualSolution, f64), SolverError> {
    opts.validate()?;
    let qv: Vec<f64> = q.density().iter().copied().collect();
    let div = divergence_of_density(problem.family(), &qv, problem.p());
    if !div.is_finite() {
        return Err(SolverError::InfiniteDivergence(div));
    }
    // linear term: b_0 = Q(X), b_i = Int g_i dQ
    let m = problem.num_constraints() + 1;
    let mut b = DVector::zeros(m);
    let p = problem.p().weights();
    for j in 0..problem.num_atoms() {
        b.axpy(p[j] * q.density()[j], &problem.g_row(j), 1.0);
    }
    let sol = maximize(problem, Some(&b), opts);
    let value = sol.dual_value;
    Ok((sol, value))
}

//! End-to-end solver checks: a discretized textbook instance with a known
//! linear projection density, derivative consistency of the dual
//! objective, weak duality and invariance properties.

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use phidiv::divergence::{DivergenceFamily, DomainMode};
use phidiv::problem::{CandidateMeasure, MomentProblem};
use phidiv::solver::{
    dual_gradient, dual_hessian, dual_objective, dual_representation, duality_gap, recover_primal,
    solve_dual, SolveStatus, SolverOptions,
};
use phidiv::ProbabilityMeasure;
use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Uniform grid on [0, 1] with the single constraint g(x) = x - 1/4.
fn quarter_mean_problem(n: usize, fam: DivergenceFamily) -> MomentProblem {
    let xs: Vec<f64> = (0..n).map(|j| j as f64 / (n - 1) as f64).collect();
    let p = ProbabilityMeasure::uniform_on(&xs).unwrap();
    let g = DMatrix::from_iterator(n, 1, xs.iter().map(|&x| x - 0.25));
    MomentProblem::new(p, g, fam).unwrap()
}

/// Exact projection density for the signed quadratic problem on any
/// discrete P: the affine function a + b*g with moments matched.
fn exact_signed_quadratic(problem: &MomentProblem) -> Vec<f64> {
    let p = problem.p().weights();
    let n = problem.num_atoms();
    let m1: f64 = (0..n).map(|j| p[j] * problem.g()[(j, 0)]).sum();
    let m2: f64 = (0..n).map(|j| p[j] * problem.g()[(j, 0)].powi(2)).sum();
    // q = 1 + a + b g, with a + b m1 = 0 and m1 + a m1 + b m2 = 0
    let b = -m1 / (m2 - m1 * m1);
    let a = -b * m1;
    (0..n).map(|j| 1.0 + a + b * problem.g()[(j, 0)]).collect()
}

#[test]
fn signed_quadratic_projection_is_affine_in_g() {
    let problem = quarter_mean_problem(201, DivergenceFamily::chi2());
    let sol = solve_dual(&problem, &SolverOptions::default()).unwrap();
    assert_eq!(sol.status, SolveStatus::Converged);
    let rep = recover_primal(&problem, &sol).unwrap();
    let exact = exact_signed_quadratic(&problem);
    for j in 0..problem.num_atoms() {
        assert_relative_eq!(rep.q_star[j], exact[j], epsilon = 1e-8);
    }
    assert!(rep.gap.abs() < 1e-10, "gap {}", rep.gap);
    assert!(rep.characterization_residual < 1e-10);
    // the density goes negative at the right edge of the grid
    assert!(*rep.q_star.last().unwrap() < 0.0);
}

#[test]
fn nonnegative_quadratic_clips_and_loses_tail() {
    let problem = quarter_mean_problem(201, DivergenceFamily::chi2_nonneg());
    let sol = solve_dual(&problem, &SolverOptions::default()).unwrap();
    assert_eq!(sol.status, SolveStatus::Converged);
    let rep = recover_primal(&problem, &sol).unwrap();
    // atoms near x = 1 are dropped, atoms near x = 0 are kept
    assert_eq!(*rep.q_star.last().unwrap(), 0.0);
    assert!(rep.q_star[0] > 1.0);
    assert!(rep.gap.abs() < 1e-8, "gap {}", rep.gap);
    // restricted to the surviving atoms the density is still affine in g
    let lam = &sol.lambda;
    for j in 0..problem.num_atoms() {
        if rep.q_star[j] > 0.0 {
            let t = lam[0] + lam[1] * problem.g()[(j, 0)];
            assert_relative_eq!(rep.q_star[j], 1.0 + t, epsilon = 1e-9);
        }
    }
    // value exceeds the signed projection value: smaller feasible set
    let signed = quarter_mean_problem(201, DivergenceFamily::chi2());
    let signed_sol = solve_dual(&signed, &SolverOptions::default()).unwrap();
    assert!(sol.dual_value > signed_sol.dual_value);
}

#[test]
fn all_families_agree_on_gap_for_quarter_mean() {
    for fam in [
        DivergenceFamily::kl(),
        DivergenceFamily::kl_m(),
        DivergenceFamily::chi2_nonneg(),
        DivergenceFamily::chi2_m(),
        DivergenceFamily::hellinger(),
    ] {
        let problem = quarter_mean_problem(101, fam);
        let sol = solve_dual(&problem, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged, "gamma {}", fam.gamma());
        let rep = recover_primal(&problem, &sol).unwrap();
        assert!(rep.gap.abs() < 1e-8, "gamma {} gap {}", fam.gamma(), rep.gap);
        let r = problem.feasibility_residual(&CandidateMeasure::from_slice(&rep.q_star));
        assert!(r.amax() < 1e-8, "gamma {} residual {}", fam.gamma(), r.amax());
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let problem = quarter_mean_problem(31, DivergenceFamily::kl());
    let lambda = DVector::from_column_slice(&[0.2, -0.4]);
    let grad = dual_gradient(&problem, &lambda).unwrap();
    let h = 1e-6;
    for i in 0..2 {
        let mut up = lambda.clone();
        let mut dn = lambda.clone();
        up[i] += h;
        dn[i] -= h;
        let fd = (dual_objective(&problem, &up) - dual_objective(&problem, &dn)) / (2.0 * h);
        assert_relative_eq!(grad[i], fd, epsilon = 1e-7, max_relative = 1e-6);
    }
}

#[test]
fn hessian_matches_finite_differences() {
    let problem = quarter_mean_problem(31, DivergenceFamily::hellinger());
    let lambda = DVector::from_column_slice(&[0.1, 0.3]);
    let hess = dual_hessian(&problem, &lambda).unwrap();
    let h = 1e-5;
    for i in 0..2 {
        let mut up = lambda.clone();
        let mut dn = lambda.clone();
        up[i] += h;
        dn[i] -= h;
        let gu = dual_gradient(&problem, &up).unwrap();
        let gd = dual_gradient(&problem, &dn).unwrap();
        for k in 0..2 {
            let fd = (gu[k] - gd[k]) / (2.0 * h);
            assert_relative_eq!(hess[(k, i)], fd, epsilon = 1e-6, max_relative = 1e-5);
        }
    }
    // concavity: both diagonal entries nonpositive
    assert!(hess[(0, 0)] < 0.0 && hess[(1, 1)] < 0.0);
}

#[test]
fn dual_representation_recovers_divergence_of_tilt() {
    // Q built by an exponential tilt along g: phi'(dQ/dP) is affine in g,
    // so the restricted variational sup attains the full divergence
    let n = 21;
    let xs: Vec<f64> = (0..n).map(|j| j as f64 / (n - 1) as f64).collect();
    let p = ProbabilityMeasure::uniform_on(&xs).unwrap();
    let g = DMatrix::from_iterator(n, 1, xs.iter().map(|&x| x - 0.5));
    let problem = MomentProblem::new(p.clone(), g, DivergenceFamily::kl()).unwrap();
    let z: f64 = (0..n).map(|j| p.weights()[j] * (0.8 * (xs[j] - 0.5)).exp()).sum();
    let q: Vec<f64> = (0..n).map(|j| (0.8 * (xs[j] - 0.5)).exp() / z).collect();
    let q = CandidateMeasure::from_slice(&q);
    let (sol, value) = dual_representation(&problem, &q, &SolverOptions::default()).unwrap();
    assert_eq!(sol.status, SolveStatus::Converged);
    let qv: Vec<f64> = q.density().iter().copied().collect();
    let div = phidiv::measure::divergence_of_density(problem.family(), &qv, problem.p());
    assert_relative_eq!(value, div, epsilon = 1e-9);

    // a density outside the tilt family: the restricted sup stays below
    let mut bumpy: Vec<f64> = vec![1.0; n];
    bumpy[3] = 1.6;
    bumpy[9] = 0.4;
    let s: f64 = (0..n).map(|j| p.weights()[j] * bumpy[j]).sum();
    for b in bumpy.iter_mut() {
        *b /= s;
    }
    let q2 = CandidateMeasure::from_slice(&bumpy);
    let (_, v2) = dual_representation(&problem, &q2, &SolverOptions::default()).unwrap();
    let div2 = phidiv::measure::divergence_of_density(problem.family(), &bumpy, problem.p());
    assert!(v2 <= div2 + 1e-10);
    assert!(v2 < div2 - 1e-4, "restricted sup {v2} should be strictly below {div2}");
}

#[test]
fn solution_invariant_under_constraint_rescaling() {
    // replacing g by 10 g rescales lambda_1 by 1/10 but leaves the
    // projection and value unchanged
    let n = 51;
    let xs: Vec<f64> = (0..n).map(|j| j as f64 / (n - 1) as f64).collect();
    let p = ProbabilityMeasure::uniform_on(&xs).unwrap();
    let g1 = DMatrix::from_iterator(n, 1, xs.iter().map(|&x| x - 0.25));
    let g2 = DMatrix::from_iterator(n, 1, xs.iter().map(|&x| 10.0 * (x - 0.25)));
    let pr1 = MomentProblem::new(p.clone(), g1, DivergenceFamily::kl()).unwrap();
    let pr2 = MomentProblem::new(p, g2, DivergenceFamily::kl()).unwrap();
    let s1 = solve_dual(&pr1, &SolverOptions::default()).unwrap();
    let s2 = solve_dual(&pr2, &SolverOptions::default()).unwrap();
    assert_relative_eq!(s1.dual_value, s2.dual_value, epsilon = 1e-10);
    assert_relative_eq!(s1.lambda[1], 10.0 * s2.lambda[1], epsilon = 1e-7);
    let r1 = recover_primal(&pr1, &s1).unwrap();
    let r2 = recover_primal(&pr2, &s2).unwrap();
    for j in 0..n {
        assert_relative_eq!(r1.q_star[j], r2.q_star[j], epsilon = 1e-8);
    }
}

#[test]
fn out_of_hull_target_never_converges() {
    // empirical-likelihood style: target far outside the convex hull of
    // the sample, the dual sup is +inf
    let p = ProbabilityMeasure::uniform_on(&[1.0, 2.0, 3.0]).unwrap();
    let g = DMatrix::from_column_slice(3, 1, &[-4.0, -3.0, -2.0]); // x - 5
    let problem = MomentProblem::new(p, g, DivergenceFamily::kl_m()).unwrap();
    let sol = solve_dual(&problem, &SolverOptions::default()).unwrap();
    assert_ne!(sol.status, SolveStatus::Converged);
}

fn random_problem(rng: &mut ChaCha8Rng, fam: DivergenceFamily) -> MomentProblem {
    loop {
        let n = rng.random_range(4..30);
        let l = rng.random_range(1..=2usize.min(n - 2));
        let mut w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = w.iter().sum();
        for x in w.iter_mut() {
            *x /= s;
        }
        let atoms: Vec<phidiv::measure::Atom> =
            (0..n).map(|j| phidiv::measure::Atom::new(j.to_string())).collect();
        let p = ProbabilityMeasure::new(atoms, w).unwrap();
        let mut g = DMatrix::zeros(n, l);
        for j in 0..n {
            for i in 0..l {
                g[(j, i)] = rng.random_range(-1.0..1.0);
            }
        }
        // keep zero in the relative interior of the moment hull so a
        // projection plainly exists
        for i in 0..l {
            let mean: f64 = (0..n).map(|j| p.weights()[j] * g[(j, i)]).sum();
            for j in 0..n {
                g[(j, i)] -= mean;
            }
        }
        if let Ok(pr) = MomentProblem::new(p, g, fam) {
            return pr;
        }
    }
}

#[test]
fn weak_duality_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for trial in 0..60 {
        let fam = match trial % 5 {
            0 => DivergenceFamily::kl(),
            1 => DivergenceFamily::kl_m(),
            2 => DivergenceFamily::chi2(),
            3 => DivergenceFamily::chi2_m(),
            _ => DivergenceFamily::hellinger(),
        };
        let problem = random_problem(&mut rng, fam);
        let sol = solve_dual(&problem, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged, "trial {trial} gamma {}", fam.gamma());
        let rep = recover_primal(&problem, &sol).unwrap();
        // primal feasible, gap numerically zero, residual tiny
        let r = problem.feasibility_residual(&CandidateMeasure::from_slice(&rep.q_star));
        assert!(r.amax() < 1e-7, "trial {trial} infeasible {}", r.amax());
        assert!(rep.gap.abs() < 1e-8, "trial {trial} gap {}", rep.gap);
        // any feasible perturbation within dom phi has larger divergence
        let gap = duality_gap(
            &problem,
            &sol.lambda,
            &CandidateMeasure::from_slice(&rep.q_star),
            1e-6,
        )
        .unwrap();
        assert!(gap >= -1e-9, "trial {trial} weak duality violated: {gap}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]
    #[test]
    fn dual_value_never_exceeds_feasible_divergence(seed in 0u64..1000) {
        // weak duality against an independently constructed feasible point
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let problem = random_problem(&mut rng, DivergenceFamily::chi2());
        let sol = solve_dual(&problem, &SolverOptions::default()).unwrap();
        let param = phidiv::oracle::parametrize_feasible(&problem).unwrap();
        let c: Vec<f64> = (0..param.dim()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let q = param.point(&c);
        let qv: Vec<f64> = q.iter().copied().collect();
        let div = phidiv::measure::divergence_of_density(problem.family(), &qv, problem.p());
        prop_assert!(sol.dual_value <= div + 1e-9 * (1.0 + div.abs()));
    }
}

#[test]
fn tighter_tolerance_does_not_degrade_gap() {
    let problem = quarter_mean_problem(101, DivergenceFamily::kl());
    let loose = solve_dual(&problem, &SolverOptions { tol: 1e-6, ..Default::default() }).unwrap();
    let tight = solve_dual(&problem, &SolverOptions { tol: 1e-12, ..Default::default() }).unwrap();
    assert!(tight.grad_norm <= loose.grad_norm + 1e-15);
    assert_relative_eq!(loose.dual_value, tight.dual_value, epsilon = 1e-9);
}

#[test]
fn gamma_zero_matches_dedicated_constructor() {
    let via_new = DivergenceFamily::new(0.0, DomainMode::NonnegativeExtension).unwrap();
    let problem = quarter_mean_problem(41, via_new);
    let reference = quarter_mean_problem(41, DivergenceFamily::kl_m());
    let a = solve_dual(&problem, &SolverOptions::default()).unwrap();
    let b = solve_dual(&reference, &SolverOptions::default()).unwrap();
    assert_eq!(a.dual_value, b.dual_value);
}

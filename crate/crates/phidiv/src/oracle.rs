//! Brute-force primal minimizer on desk-scale instances.
//!
//! Parametrizes the affine feasible slice in density space (base point
//! plus null-space basis of the constraint map), sweeps a dense grid over
//! the free coefficients and polishes with coordinate-wise golden-section
//! passes. Deliberately independent of the dual solver: used to validate
//! it, never to replace it.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::divergence::{golden_section_max, INF};
use crate::measure::divergence_of_density;
use crate::problem::MomentProblem;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("the affine system A q = e0 has no solution; the feasible set is empty")]
    InfeasibleAffineSystem,
    #[error("null-space dimension {0} exceeds the oracle limit of 3")]
    TooManyDimensions(usize),
    #[error("more constraints than atoms: {constraints}+1 > {atoms}")]
    Overdetermined { constraints: usize, atoms: usize },
}

/// Affine parametrization of the feasible densities: every feasible q is
/// `base_point + basis * c`.
#[derive(Debug, Clone)]
pub struct FeasibleParametrization {
    pub base_point: DVector<f64>,
    /// n x (n - 1 - l) matrix whose columns span the null space of the
    /// constraint map.
    pub basis: DMatrix<f64>,
}

impl FeasibleParametrization {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
    pub fn point(&self, c: &[f64]) -> DVector<f64> {
        let mut q = self.base_point.clone();
        for (k, &ck) in c.iter().enumerate() {
            q.axpy(ck, &self.basis.column(k).clone_owned(), 1.0);
        }
        q
    }
}

/// Base point via the minimum-norm solution of A q = e0, null-space basis
/// by orthogonal completion of the row space.
pub fn parametrize_feasible(problem: &MomentProblem) -> Result<FeasibleParametrization, OracleError> {
    let n = problem.num_atoms();
    let l = problem.num_constraints();
    if n < l + 1 {
        return Err(OracleError::Overdetermined { constraints: l, atoms: n });
    }
    let a = problem.constraint_matrix();
    let mut e0 = DVector::zeros(l + 1);
    e0[0] = 1.0;
    let svd = a.clone().svd(true, true);
    let base = svd.solve(&e0, 1e-12).map_err(|_| OracleError::InfeasibleAffineSystem)?;
    let resid = (&a * &base - &e0).amax();
    if resid > 1e-10 {
        return Err(OracleError::InfeasibleAffineSystem);
    }

    // row space of A = span of the right singular vectors with nonzero
    // singular value
    let v_t = svd.v_t.expect("svd vectors requested");
    let smax = svd.singular_values.max();
    let row_space: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > 1e-12 * smax.max(1e-300))
        .map(|(i, _)| v_t.row(i).transpose())
        .collect();

    // complete to an orthonormal basis by modified Gram-Schmidt over the
    // standard basis
    let mut null_basis: Vec<DVector<f64>> = Vec::new();
    let target = n - row_space.len();
    for k in 0..n {
        if null_basis.len() == target {
            break;
        }
        let mut v = DVector::zeros(n);
        v[k] = 1.0;
        for u in row_space.iter().chain(null_basis.iter()) {
            let proj = u.dot(&v);
            v.axpy(-proj, u, 1.0);
        }
        let norm = v.norm();
        if norm > 1e-8 {
            null_basis.push(v / norm);
        }
    }
    let basis = if null_basis.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(
            &null_basis.iter().map(|v| v.column(0).clone_owned()).collect::<Vec<_>>(),
        )
    };
    Ok(FeasibleParametrization { base_point: base, basis })
}

#[derive(Debug, Clone, Copy)]
pub struct OracleOptions {
    /// Half-width of the search box in null-space coordinates.
    pub radius: f64,
    /// Grid points per axis.
    pub resolution: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { radius: 10.0, resolution: 401 }
    }
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub value: f64,
    pub q: Vec<f64>,
    /// The grid minimizer touched the search box; for non-coercive
    /// families the true infimum may lie outside.
    pub on_box_boundary: bool,
}

/// Dense grid sweep plus coordinate-wise golden-section refinement.
/// Enforces null-space dimension <= 3.
pub fn oracle_solve(problem: &MomentProblem, opts: &OracleOptions) -> Result<OracleResult, OracleError> {
    let param = parametrize_feasible(problem)?;
    let dim = param.dim();
    if dim > 3 {
        return Err(OracleError::TooManyDimensions(dim));
    }
    let fam = problem.family();
    let eval = |c: &[f64]| -> f64 {
        let q = param.point(c);
        let qv: Vec<f64> = q.iter().copied().collect();
        divergence_of_density(fam, &qv, problem.p())
    };

    if dim == 0 {
        let value = eval(&[]);
        let q: Vec<f64> = param.base_point.iter().copied().collect();
        return Ok(OracleResult { value, q, on_box_boundary: false });
    }

    let res = opts.resolution.max(3);
    let step = 2.0 * opts.radius / (res - 1) as f64;
    let axis: Vec<f64> = (0..res).map(|i| -opts.radius + i as f64 * step).collect();

    let mut best_c = vec![0.0; dim];
    let mut best = INF;
    let mut idx = vec![0usize; dim];
    'grid: loop {
        let c: Vec<f64> = idx.iter().map(|&i| axis[i]).collect();
        let v = eval(&c);
        if v < best {
            best = v;
            best_c = c;
        }
        // odometer increment
        for d in 0..dim {
            idx[d] += 1;
            if idx[d] < res {
                continue 'grid;
            }
            idx[d] = 0;
        }
        break;
    }
    if best == INF {
        let q: Vec<f64> = param.point(&best_c).iter().copied().collect();
        return Ok(OracleResult { value: INF, q, on_box_boundary: false });
    }

    // coordinate-wise golden-section polish around the best grid point;
    // each pass can only improve
    for _pass in 0..4 {
        for k in 0..dim {
            let lo = best_c[k] - step;
            let hi = best_c[k] + step;
            let line = |x: f64| {
                let mut c = best_c.clone();
                c[k] = x;
                -eval(&c)
            };
            let (x, neg_v) = golden_section_max(line, lo, hi, 120);
            if -neg_v < best {
                best = -neg_v;
                best_c[k] = x;
            }
        }
    }

    let on_box = best_c.iter().any(|c| c.abs() >= opts.radius - step);
    let q: Vec<f64> = param.point(&best_c).iter().copied().collect();
    Ok(OracleResult { value: best, q, on_box_boundary: on_box })
}

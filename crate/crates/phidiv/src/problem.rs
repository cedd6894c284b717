//! The projection problem instance: reference measure, constraint matrix
//! and divergence family.
//!
//! The feasible set is the signed measures Q with total mass one whose
//! moments against the constraint columns vanish:
//! `Q(X) = 1` and `Sum_j G[j][i] Q(x_j) = 0`. The constant function is an
//! implicit zeroth constraint column.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::divergence::DivergenceFamily;
use crate::measure::ProbabilityMeasure;

pub const RANK_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("constraint matrix has {rows} rows but P has {atoms} atoms")]
    DimensionMismatch { rows: usize, atoms: usize },
    #[error("constraint functions are linearly dependent on supp P; kernel vector {kernel:?}")]
    RankDeficient { kernel: Vec<f64> },
    #[error("non-finite entry {value} in constraint column {col}, row {row}")]
    NonFiniteEntry { row: usize, col: usize, value: f64 },
}

/// A candidate density vector aligned to supp P.
#[derive(Debug, Clone)]
pub struct CandidateMeasure(pub DVector<f64>);

impl CandidateMeasure {
    pub fn from_slice(q: &[f64]) -> Self {
        Self(DVector::from_column_slice(q))
    }
    pub fn density(&self) -> &DVector<f64> {
        &self.0
    }
}

#[derive(Debug, Clone)]
pub struct MomentProblem {
    p: ProbabilityMeasure,
    /// n x l, entry [j, i] = g_i(x_j); the implicit column of ones is not stored.
    g: DMatrix<f64>,
    family: DivergenceFamily,
}

impl MomentProblem {
    /// Validates dimensions and the weighted full-column-rank condition on
    /// [1 | G]: no nonzero lambda with lambda^T g(x_j) = 0 on all of supp P.
    pub fn new(
        p: ProbabilityMeasure,
        g: DMatrix<f64>,
        family: DivergenceFamily,
    ) -> Result<Self, ProblemError> {
        Self::with_rank_threshold(p, g, family, RANK_THRESHOLD)
    }

    pub fn with_rank_threshold(
        p: ProbabilityMeasure,
        g: DMatrix<f64>,
        family: DivergenceFamily,
        threshold: f64,
    ) -> Result<Self, ProblemError> {
        let n = p.len();
        if g.nrows() != n {
            return Err(ProblemError::DimensionMismatch { rows: g.nrows(), atoms: n });
        }
        for j in 0..n {
            for i in 0..g.ncols() {
                if !g[(j, i)].is_finite() {
                    return Err(ProblemError::NonFiniteEntry { row: j, col: i, value: g[(j, i)] });
                }
            }
        }
        let prob = Self { p, g, family };
        // rank of [1 | G] row-weighted by sqrt(P_j), via SVD
        let a = prob.weighted_design();
        let svd = a.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if prob.num_constraints() + 1 > n || smin <= threshold * smax.max(1e-300) {
            // smallest right singular vector spans the kernel
            let v_t = svd.v_t.expect("svd vectors requested");
            let idx = svd.singular_values.imin();
            let kernel: Vec<f64> = v_t.row(idx).iter().copied().collect();
            return Err(ProblemError::RankDeficient { kernel });
        }
        Ok(prob)
    }

    /// Skips dimension and rank validation. For synthetic degenerate
    /// instances in diagnostics and tests; the solver assumes the rank
    /// invariant and may misbehave without it.
    pub fn new_unchecked(p: ProbabilityMeasure, g: DMatrix<f64>, family: DivergenceFamily) -> Self {
        assert_eq!(g.nrows(), p.len());
        Self { p, g, family }
    }

    pub fn p(&self) -> &ProbabilityMeasure {
        &self.p
    }
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }
    pub fn family(&self) -> &DivergenceFamily {
        &self.family
    }
    pub fn with_family(&self, family: DivergenceFamily) -> Self {
        Self { p: self.p.clone(), g: self.g.clone(), family }
    }
    pub fn num_atoms(&self) -> usize {
        self.p.len()
    }
    /// l, excluding the implicit mass constraint.
    pub fn num_constraints(&self) -> usize {
        self.g.ncols()
    }

    /// `lambda^T g(x_j) = lambda_0 + Sum_i lambda_i G[j][i]`.
    pub fn lambda_dot_g(&self, lambda: &DVector<f64>, j: usize) -> f64 {
        let mut t = lambda[0];
        for i in 0..self.g.ncols() {
            t += lambda[i + 1] * self.g[(j, i)];
        }
        t
    }

    /// The extended constraint vector g(x_j) = (1, g_1(x_j), ..., g_l(x_j)).
    pub fn g_row(&self, j: usize) -> DVector<f64> {
        let mut v = DVector::zeros(self.g.ncols() + 1);
        v[0] = 1.0;
        for i in 0..self.g.ncols() {
            v[i + 1] = self.g[(j, i)];
        }
        v
    }

    /// [1 | G] with rows scaled by sqrt(P_j); full column rank by the
    /// construction invariant.
    pub fn weighted_design(&self) -> DMatrix<f64> {
        let n = self.num_atoms();
        let l = self.num_constraints();
        let mut a = DMatrix::zeros(n, l + 1);
        for j in 0..n {
            let s = self.p.weights()[j].sqrt();
            a[(j, 0)] = s;
            for i in 0..l {
                a[(j, i + 1)] = s * self.g[(j, i)];
            }
        }
        a
    }

    /// Constraint map in density space: row 0 is P_j, row i is P_j G[j][i];
    /// feasibility is A q = e_0.
    pub fn constraint_matrix(&self) -> DMatrix<f64> {
        let n = self.num_atoms();
        let l = self.num_constraints();
        let mut a = DMatrix::zeros(l + 1, n);
        for j in 0..n {
            let pj = self.p.weights()[j];
            a[(0, j)] = pj;
            for i in 0..l {
                a[(i + 1, j)] = pj * self.g[(j, i)];
            }
        }
        a
    }

    /// Residual of the affine constraints at a candidate density:
    /// component 0 is `Sum_j P_j q_j - 1`, component i is
    /// `Sum_j G[j][i] P_j q_j`.
    pub fn feasibility_residual(&self, q: &CandidateMeasure) -> DVector<f64> {
        let mut r = self.constraint_matrix() * q.density();
        r[0] -= 1.0;
        r
    }
}

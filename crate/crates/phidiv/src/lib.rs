//! Moment-constrained phi-divergence projections of discrete probability
//! measures, computed through the finite-dimensional Fenchel dual.
//!
//! Given a reference probability measure P on finitely many atoms, a
//! matrix of constraint function values and a power divergence, the crate
//! maximizes the concave dual
//! `lambda_0 - Sum_j P_j phi*(lambda^T g(x_j))`
//! and recovers the projection density `q*_j = (phi*)'(lambda^T g(x_j))`,
//! reporting the duality gap, a characterization residual and
//! existence/uniqueness diagnostics. A brute-force primal oracle validates
//! the solver on small instances.

pub mod cli;
pub mod diagnostics;
pub mod divergence;
pub mod measure;
pub mod oracle;
pub mod problem;
pub mod solver;

pub use diagnostics::{cq_check, existence_report, CqStatus, DiagnosticsReport};
pub use divergence::{DivergenceFamily, DomainMode};
pub use measure::{DiscreteSignedMeasure, ProbabilityMeasure};
pub use problem::{CandidateMeasure, MomentProblem};
pub use solver::{recover_primal, solve_dual, DualSolution, ProjectionReport, SolveStatus, SolverOptions};

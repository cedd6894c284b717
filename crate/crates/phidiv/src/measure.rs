//! Discrete signed finite measures and divergence evaluation.
//!
//! Atoms carry an exact identifier (matching between measures is by
//! identifier, never by floating-point coordinate comparison) and an
//! optional coordinate vector used only for reporting.

use std::collections::HashMap;

use thiserror::Error;

use crate::divergence::{ext_add, DivergenceFamily, INF};

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub id: String,
    pub coord: Option<Vec<f64>>,
}

impl Atom {
    pub fn new(id: impl Into<String>) -> Self {
        Self { id: id.into(), coord: None }
    }
    pub fn with_coord(id: impl Into<String>, coord: Vec<f64>) -> Self {
        Self { id: id.into(), coord: Some(coord) }
    }
}

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("atoms and weights differ in length: {atoms} vs {weights}")]
    LengthMismatch { atoms: usize, weights: usize },
    #[error("duplicate atom identifier {0:?}")]
    DuplicateAtom(String),
    #[error("non-finite weight {weight} at atom {id:?}")]
    NonFiniteWeight { id: String, weight: f64 },
    #[error("negative weight {weight} at atom {id:?} in a probability measure")]
    NegativeWeight { id: String, weight: f64 },
    #[error("probability weights sum to {0}, expected 1 within 1e-12")]
    NotNormalized(f64),
    #[error("probability measure has no atoms with positive weight")]
    Empty,
}

/// A signed finite measure on finitely many atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSignedMeasure {
    atoms: Vec<Atom>,
    weights: Vec<f64>,
}

impl DiscreteSignedMeasure {
    pub fn new(atoms: Vec<Atom>, weights: Vec<f64>) -> Result<Self, MeasureError> {
        if atoms.len() != weights.len() {
            return Err(MeasureError::LengthMismatch { atoms: atoms.len(), weights: weights.len() });
        }
        let mut seen = HashMap::new();
        for (i, a) in atoms.iter().enumerate() {
            if seen.insert(a.id.clone(), i).is_some() {
                return Err(MeasureError::DuplicateAtom(a.id.clone()));
            }
            if !weights[i].is_finite() {
                return Err(MeasureError::NonFiniteWeight { id: a.id.clone(), weight: weights[i] });
            }
        }
        Ok(Self { atoms, weights })
    }

    /// Convenience: atoms "0", "1", ... with 1-d coordinates.
    pub fn from_points(points: &[f64], weights: &[f64]) -> Result<Self, MeasureError> {
        let atoms = points
            .iter()
            .enumerate()
            .map(|(i, &x)| Atom::with_coord(i.to_string(), vec![x]))
            .collect();
        Self::new(atoms, weights.to_vec())
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn len(&self) -> usize {
        self.atoms.len()
    }
    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }
    pub fn total_variation(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum()
    }

    /// Jordan decomposition: Q = Q_plus - Q_minus with nonnegative weights
    /// and disjoint supports.
    pub fn jordan_split(&self) -> (DiscreteSignedMeasure, DiscreteSignedMeasure) {
        let plus: Vec<f64> = self.weights.iter().map(|&w| w.max(0.0)).collect();
        let minus: Vec<f64> = self.weights.iter().map(|&w| (-w).max(0.0)).collect();
        (
            Self { atoms: self.atoms.clone(), weights: plus },
            Self { atoms: self.atoms.clone(), weights: minus },
        )
    }
}

/// A probability measure: positive weights summing to one. Zero-weight
/// atoms are dropped at construction; weights below 1e-15 are rejected
/// rather than kept (densities against them are numerically meaningless).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMeasure {
    inner: DiscreteSignedMeasure,
}

impl ProbabilityMeasure {
    pub fn new(atoms: Vec<Atom>, weights: Vec<f64>) -> Result<Self, MeasureError> {
        Self::build(atoms, weights, false)
    }

    /// Renormalizes Sum w = 1 instead of rejecting; the off-by tolerance
    /// still guards against gross errors only under `new`.
    pub fn new_renormalized(atoms: Vec<Atom>, weights: Vec<f64>) -> Result<Self, MeasureError> {
        Self::build(atoms, weights, true)
    }

    fn build(atoms: Vec<Atom>, weights: Vec<f64>, renormalize: bool) -> Result<Self, MeasureError> {
        let m = DiscreteSignedMeasure::new(atoms, weights)?;
        let mut atoms = Vec::new();
        let mut weights = Vec::new();
        for (a, &w) in m.atoms.iter().zip(&m.weights) {
            if w == 0.0 {
                continue;
            }
            if w < 0.0 {
                return Err(MeasureError::NegativeWeight { id: a.id.clone(), weight: w });
            }
            if w < 1e-15 {
                return Err(MeasureError::NonFiniteWeight { id: a.id.clone(), weight: w });
            }
            atoms.push(a.clone());
            weights.push(w);
        }
        if atoms.is_empty() {
            return Err(MeasureError::Empty);
        }
        let total: f64 = weights.iter().sum();
        if renormalize {
            for w in &mut weights {
                *w /= total;
            }
        } else if (total - 1.0).abs() > 1e-12 {
            return Err(MeasureError::NotNormalized(total));
        }
        Ok(Self { inner: DiscreteSignedMeasure { atoms, weights } })
    }

    pub fn uniform_on(points: &[f64]) -> Result<Self, MeasureError> {
        let n = points.len();
        let atoms = points
            .iter()
            .enumerate()
            .map(|(i, &x)| Atom::with_coord(i.to_string(), vec![x]))
            .collect();
        Self::new_renormalized(atoms, vec![1.0 / n as f64; n])
    }

    pub fn atoms(&self) -> &[Atom] {
        self.inner.atoms()
    }
    pub fn weights(&self) -> &[f64] {
        self.inner.weights()
    }
    pub fn len(&self) -> usize {
        self.inner.len()
    }
    pub fn is_empty(&self) -> bool {
        self.inner.is_empty()
    }
    pub fn as_signed(&self) -> &DiscreteSignedMeasure {
        &self.inner
    }

    /// The measure with density q against self (atoms shared).
    pub fn with_density(&self, q: &[f64]) -> DiscreteSignedMeasure {
        assert_eq!(q.len(), self.len());
        let weights = self.weights().iter().zip(q).map(|(&p, &qi)| p * qi).collect();
        DiscreteSignedMeasure { atoms: self.inner.atoms.clone(), weights }
    }
}

/// Density of Q against P plus the Jordan-decomposed singular masses
/// (Q-weight sitting on atoms outside supp P).
#[derive(Debug, Clone, PartialEq)]
pub struct DensitySplit {
    /// dQ/dP over the atoms of P, in P's atom order.
    pub density: Vec<f64>,
    pub singular_pos: f64,
    pub singular_neg: f64,
}

/// Lebesgue-style decomposition of Q w.r.t. P, matching atoms by identifier.
pub fn density(q: &DiscreteSignedMeasure, p: &ProbabilityMeasure) -> DensitySplit {
    let index: HashMap<&str, usize> =
        p.atoms().iter().enumerate().map(|(i, a)| (a.id.as_str(), i)).collect();
    let mut dens = vec![0.0; p.len()];
    let mut singular_pos = 0.0;
    let mut singular_neg = 0.0;
    for (a, &w) in q.atoms().iter().zip(q.weights()) {
        match index.get(a.id.as_str()) {
            Some(&j) => dens[j] = w / p.weights()[j],
            None if w >= 0.0 => singular_pos += w,
            None => singular_neg += -w,
        }
    }
    DensitySplit { density: dens, singular_pos, singular_neg }
}

/// `phi(Q, P) = Sum_j P_j phi(q_j)` when Q << P, `+inf` otherwise.
pub fn divergence(fam: &DivergenceFamily, q: &DiscreteSignedMeasure, p: &ProbabilityMeasure) -> f64 {
    let split = density(q, p);
    if split.singular_pos > 0.0 || split.singular_neg > 0.0 {
        return INF;
    }
    divergence_of_density(fam, &split.density, p)
}

/// Divergence from the density vector directly (Q = q P by construction).
pub fn divergence_of_density(fam: &DivergenceFamily, q: &[f64], p: &ProbabilityMeasure) -> f64 {
    let mut acc = 0.0;
    for (&pj, &qj) in p.weights().iter().zip(q) {
        acc = ext_add(acc, pj * fam.phi(qj));
        if acc == INF {
            return INF;
        }
    }
    acc
}

/// Divergence extended to non-a.c. Q via the recession slopes of phi on
/// the singular part:
/// `Int phi(q) dP + b_conj * sigma_pos + (-a_conj) * sigma_neg`,
/// with `0 * inf = 0` when the singular mass is exactly zero. Coincides
/// with [`divergence`] bit-for-bit when Q << P.
pub fn divergence_extended(
    fam: &DivergenceFamily,
    q: &DiscreteSignedMeasure,
    p: &ProbabilityMeasure,
) -> f64 {
    let split = density(q, p);
    let mut acc = divergence_of_density(fam, &split.density, p);
    if split.singular_pos > 0.0 {
        acc = ext_add(acc, fam.b_conj() * split.singular_pos);
    }
    if split.singular_neg > 0.0 {
        acc = ext_add(acc, -fam.a_conj() * split.singular_neg);
    }
    acc
}

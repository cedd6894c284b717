//! Power divergence functions, their derivatives and Fenchel conjugates.
//!
//! The family is parametrized by a real index `gamma`:
//!
//! ```text
//! phi_g(x) = (x^g - g*x + g - 1) / (g*(g-1))      g not in {0, 1}
//! phi_0(x) = -ln x + x - 1                        (modified KL / Burg)
//! phi_1(x) = x ln x - x + 1                       (KL)
//! ```
//!
//! with `phi_g(1) = 0`. Special members: gamma = 2 is chi-squared
//! (`(x-1)^2 / 2`), gamma = -1 is modified chi-squared, gamma = 1/2 is
//! Hellinger. By default the functions are extended with `+inf` on the
//! negative half-line; the chi-squared member is the only one that is
//! finite and convex on all of R and may be used un-extended.
//!
//! All evaluations use extended-real semantics: `+inf` marks points
//! outside the effective domain, it is never an error.

use thiserror::Error;

pub const INF: f64 = f64::INFINITY;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainMode {
    /// `phi(x) = +inf` for `x < 0`; the measure-side domain is the cone
    /// of nonnegative densities.
    NonnegativeExtension,
    /// `phi` finite and convex on all of R. Only valid for gamma = 2.
    FullLine,
}

#[derive(Debug, Error)]
pub enum FamilyError {
    #[error("gamma must be finite, got {0}")]
    NonFiniteGamma(f64),
    #[error("full-line domain requires gamma = 2; phi_{0} is not finite and convex on the negatives")]
    FullLineUnsupported(f64),
}

/// Argument outside the open domain of a derivative or inverse.
/// Distinguishable from numeric failure: carries the violated interval.
#[derive(Debug, Error)]
#[error("argument {value} outside the open interval ({lo}, {hi})")]
pub struct BoundaryError {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

/// A member of the power divergence family, with precomputed domain
/// endpoints for `phi` and its conjugate. Immutable after construction.
#[derive(Debug, Clone, Copy)]
pub struct DivergenceFamily {
    gamma: f64,
    domain_mode: DomainMode,
    a_phi: f64,
    b_phi: f64,
    a_conj: f64,
    b_conj: f64,
}

impl DivergenceFamily {
    pub fn new(gamma: f64, domain_mode: DomainMode) -> Result<Self, FamilyError> {
        if !gamma.is_finite() {
            return Err(FamilyError::NonFiniteGamma(gamma));
        }
        if domain_mode == DomainMode::FullLine && gamma != 2.0 {
            return Err(FamilyError::FullLineUnsupported(gamma));
        }
        let (a_phi, a_conj) = match domain_mode {
            DomainMode::FullLine => (-INF, -INF),
            // At x = 0 the extended phi is finite or +inf, so the sup in
            // the conjugate stays bounded below for every t: a_conj = -inf.
            DomainMode::NonnegativeExtension => (0.0, -INF),
        };
        // b_conj = lim phi(x)/x as x -> +inf: the linear coefficient
        // 1/(1-gamma) for gamma < 1, +inf for superlinear growth.
        let b_conj = if gamma >= 1.0 || domain_mode == DomainMode::FullLine {
            INF
        } else {
            1.0 / (1.0 - gamma)
        };
        Ok(Self { gamma, domain_mode, a_phi, b_phi: INF, a_conj, b_conj })
    }

    pub fn kl() -> Self {
        Self::new(1.0, DomainMode::NonnegativeExtension).unwrap()
    }
    pub fn kl_m() -> Self {
        Self::new(0.0, DomainMode::NonnegativeExtension).unwrap()
    }
    pub fn chi2() -> Self {
        Self::new(2.0, DomainMode::FullLine).unwrap()
    }
    pub fn chi2_nonneg() -> Self {
        Self::new(2.0, DomainMode::NonnegativeExtension).unwrap()
    }
    pub fn chi2_m() -> Self {
        Self::new(-1.0, DomainMode::NonnegativeExtension).unwrap()
    }
    pub fn hellinger() -> Self {
        Self::new(0.5, DomainMode::NonnegativeExtension).unwrap()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn domain_mode(&self) -> DomainMode {
        self.domain_mode
    }
    pub fn a_phi(&self) -> f64 {
        self.a_phi
    }
    pub fn b_phi(&self) -> f64 {
        self.b_phi
    }
    pub fn a_conj(&self) -> f64 {
        self.a_conj
    }
    pub fn b_conj(&self) -> f64 {
        self.b_conj
    }

    /// phi at x, with `+inf` outside the domain. Total on the extended reals.
    pub fn phi(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        if self.domain_mode == DomainMode::FullLine {
            if x.is_infinite() {
                return INF;
            }
            let d = x - 1.0;
            return 0.5 * d * d;
        }
        if x < 0.0 {
            return INF;
        }
        if x == INF {
            return INF;
        }
        let g = self.gamma;
        if x == 0.0 {
            // right limit: finite iff gamma > 0
            return if g > 0.0 { 1.0 / g } else { INF };
        }
        if g == 0.0 {
            -x.ln() + x - 1.0
        } else if g == 1.0 {
            x * x.ln() - x + 1.0
        } else {
            (x.powf(g) - g * x + g - 1.0) / (g * (g - 1.0))
        }
    }

    /// phi'(x) on the open interval (a_phi, b_phi).
    pub fn phi_prime(&self, x: f64) -> Result<f64, BoundaryError> {
        if !(x > self.a_phi && x < self.b_phi) || x.is_nan() {
            return Err(BoundaryError { value: x, lo: self.a_phi, hi: self.b_phi });
        }
        let g = self.gamma;
        Ok(if self.domain_mode == DomainMode::FullLine {
            x - 1.0
        } else if g == 0.0 {
            1.0 - 1.0 / x
        } else if g == 1.0 {
            x.ln()
        } else {
            (x.powf(g - 1.0) - 1.0) / (g - 1.0)
        })
    }

    /// Interior of the image of phi'.
    pub fn phi_prime_range(&self) -> (f64, f64) {
        if self.domain_mode == DomainMode::FullLine {
            return (-INF, INF);
        }
        let g = self.gamma;
        let lo = if g > 1.0 { -1.0 / (g - 1.0) } else { -INF };
        let hi = if g >= 1.0 { INF } else { 1.0 / (1.0 - g) };
        (lo, hi)
    }

    /// Inverse of phi' on the interior of its image.
    pub fn phi_prime_inv(&self, t: f64) -> Result<f64, BoundaryError> {
        let (lo, hi) = self.phi_prime_range();
        if !(t > lo && t < hi) || t.is_nan() {
            return Err(BoundaryError { value: t, lo, hi });
        }
        let g = self.gamma;
        Ok(if self.domain_mode == DomainMode::FullLine {
            1.0 + t
        } else if g == 0.0 {
            1.0 / (1.0 - t)
        } else if g == 1.0 {
            t.exp()
        } else {
            (1.0 + (g - 1.0) * t).powf(1.0 / (g - 1.0))
        })
    }

    /// Fenchel conjugate `phi*(t) = sup_x { t x - phi(x) }`, closed form.
    /// Returns `+inf` beyond `b_conj`, never an error.
    pub fn conj(&self, t: f64) -> f64 {
        if t.is_nan() {
            return f64::NAN;
        }
        if t == INF || t == -INF {
            return INF;
        }
        let g = self.gamma;
        if self.domain_mode == DomainMode::FullLine {
            return t + 0.5 * t * t;
        }
        if g == 1.0 {
            return t.exp() - 1.0;
        }
        if g == 0.0 {
            return if t < 1.0 { -(1.0 - t).ln() } else { INF };
        }
        if g > 1.0 {
            // below phi'(0) the sup sits at x = 0
            if t <= -1.0 / (g - 1.0) {
                return -1.0 / g;
            }
            return ((1.0 + (g - 1.0) * t).powf(g / (g - 1.0)) - 1.0) / g;
        }
        // gamma < 1: dom phi* is bounded above by b_conj = 1/(1-gamma)
        if t > self.b_conj {
            return INF;
        }
        // at t = b_conj the argument below is 0; powf(neg exponent) yields
        // +inf for 0 < gamma < 1 and 0 for gamma < 0, both are the correct
        // closure values
        ((1.0 + (g - 1.0) * t).powf(g / (g - 1.0)) - 1.0) / g
    }

    /// `(phi*)'(t)` on the open interval (a_conj, b_conj).
    ///
    /// Equals `phi_prime_inv(t)` on the interior of Im phi'; for
    /// gamma > 1 under the nonnegative extension it continues with the
    /// constant 0 below phi'(0) (the sup in the conjugate is pinned at
    /// x = 0 there).
    pub fn conj_prime(&self, t: f64) -> Result<f64, BoundaryError> {
        if !(t > self.a_conj && t < self.b_conj) || t.is_nan() {
            return Err(BoundaryError { value: t, lo: self.a_conj, hi: self.b_conj });
        }
        let g = self.gamma;
        if self.domain_mode == DomainMode::NonnegativeExtension && g > 1.0 && t <= -1.0 / (g - 1.0)
        {
            return Ok(0.0);
        }
        self.phi_prime_inv(t)
    }

    /// `(phi*)''(t)` on the open interval (a_conj, b_conj). Strictly
    /// positive on the interior of Im phi'.
    pub fn conj_second(&self, t: f64) -> Result<f64, BoundaryError> {
        if !(t > self.a_conj && t < self.b_conj) || t.is_nan() {
            return Err(BoundaryError { value: t, lo: self.a_conj, hi: self.b_conj });
        }
        let g = self.gamma;
        Ok(if self.domain_mode == DomainMode::FullLine {
            1.0
        } else if g == 0.0 {
            let d = 1.0 - t;
            1.0 / (d * d)
        } else if g == 1.0 {
            t.exp()
        } else if g > 1.0 && t <= -1.0 / (g - 1.0) {
            0.0
        } else {
            (1.0 + (g - 1.0) * t).powf((2.0 - g) / (g - 1.0))
        })
    }

    /// Superlinear growth in every unbounded domain direction.
    pub fn coercive(&self) -> bool {
        self.b_conj == INF && (self.a_phi.is_finite() || self.a_conj == -INF)
    }

    /// phi' blows up at every finite domain endpoint; equivalent to
    /// strict convexity of phi* and uniqueness of the dual optimum.
    pub fn essentially_smooth(&self) -> bool {
        match self.domain_mode {
            DomainMode::FullLine => true,
            // phi'(0+) = -inf iff gamma <= 1
            DomainMode::NonnegativeExtension => self.gamma <= 1.0,
        }
    }

    /// All power members are strictly convex on the interior of dom phi.
    pub fn strictly_convex(&self) -> bool {
        true
    }

    /// The scaling bound phi(cx) <= c1 phi(x) + c2 |x| + c3 near c = 1
    /// holds for every power member; asserted per family, the constants
    /// are not computed.
    pub fn condition_c0(&self) -> bool {
        true
    }
}

/// Grid for the brute-force Legendre transform oracle.
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub points: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { points: 4000, lo: 1e-9, hi: 1e6 }
    }
}

/// Brute-force `sup_x { t x - phi(x) }` over a log-spaced grid with one
/// golden-section refinement around the grid argmax.
///
/// Independent oracle for [`DivergenceFamily::conj`]; deliberately knows
/// nothing about the closed forms. If the sup runs against the grid
/// truncation the result is reported as `+inf` (the transform diverges
/// within the searched box, which at `hi = 1e6` only happens beyond
/// `b_conj`).
pub fn legendre_numeric(fam: &DivergenceFamily, t: f64, grid: &GridSpec) -> f64 {
    let score = |x: f64| t * x - fam.phi(x);
    let mut xs: Vec<f64> = Vec::with_capacity(2 * grid.points + 2);
    if grid.points == 0 {
        return -INF;
    }
    let (llo, lhi) = (grid.lo.ln(), grid.hi.ln());
    for i in 0..grid.points {
        let f = i as f64 / (grid.points - 1) as f64;
        xs.push((llo + f * (lhi - llo)).exp());
    }
    if fam.domain_mode() == DomainMode::FullLine {
        let mut neg: Vec<f64> = xs.iter().rev().map(|x| -x).collect();
        neg.push(0.0);
        neg.extend_from_slice(&xs);
        xs = neg;
    } else {
        xs.insert(0, 0.0);
    }

    let mut best_i = 0usize;
    let mut best = -INF;
    for (i, &x) in xs.iter().enumerate() {
        let s = score(x);
        if s > best {
            best = s;
            best_i = i;
        }
    }
    if best == -INF {
        return -INF;
    }
    // sup pressed against the truncation: treat as divergent
    if best_i == 0 && fam.domain_mode() == DomainMode::FullLine {
        return INF;
    }
    if best_i == xs.len() - 1 {
        return INF;
    }
    let lo = if best_i == 0 { xs[0] } else { xs[best_i - 1] };
    let hi = xs[best_i + 1];
    golden_section_max(score, lo, hi, 200).1
}

/// Golden-section search for the maximum of a unimodal function on [lo, hi].
/// Returns (argmax, max).
pub fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iters {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        }
        if hi - lo < 1e-14 * (1.0 + lo.abs() + hi.abs()) {
            break;
        }
    }
    let mid = 0.5 * (lo + hi);
    (mid, f(mid))
}

/// Extended-real sum. `inf - inf` is a logic error in this crate, never a
/// silent zero.
pub fn ext_add(a: f64, b: f64) -> f64 {
    let s = a + b;
    assert!(!s.is_nan() || a.is_nan() || b.is_nan(), "extended-real sum inf - inf ({a} + {b})");
    s
}

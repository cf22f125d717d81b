//! B-spline bases on a closed interval and the ridge penalty that turns a
//! penalized spline fit into an i.i.d. random-effects model.
//!
//! A coefficient function `β(t) = B(t)ᵀ b` penalized by `bᵀ P b` with
//! `P = ∫ B Bᵀ` is equivalent to `b ~ N(0, σ² P⁻¹)`. Writing `P⁻¹ = R Rᵀ`
//! and `γ = R⁻¹ b` gives `γ ~ N(0, σ² I)`, so the design picks up the factor
//! `R` ([`PenaltyFactor::scale_sqrt`]).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix};
// Dev-dependencies link std in test builds, shadowing these methods there.
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

/// Closed interval `[lo, hi]` with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const UNIT: Interval = Interval { lo: 0.0, hi: 1.0 };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidDomain { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    fn slack(&self) -> f64 {
        1e-12 * self.width().max(1.0)
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.lo - self.slack() && t <= self.hi + self.slack()
    }

    /// Checks membership and snaps values within rounding distance of an
    /// endpoint onto it.
    pub fn check(&self, t: f64) -> Result<f64> {
        if !t.is_finite() || !self.contains(t) {
            return Err(Error::OutOfDomain {
                time: t,
                lo: self.lo,
                hi: self.hi,
            });
        }
        Ok(t.max(self.lo).min(self.hi))
    }

    /// `n ≥ 2` equispaced points including both endpoints.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        assert!(n >= 2, "grid needs at least two points");
        let step = self.width() / (n - 1) as f64;
        (0..n)
            .map(|j| if j == n - 1 { self.hi } else { self.lo + step * j as f64 })
            .collect()
    }
}

/// Clamped B-spline basis with equispaced interior knots.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec {
    degree: usize,
    num_basis: usize,
    domain: Interval,
    /// Full knot vector: boundary knots repeated `degree + 1` times.
    knots: Vec<f64>,
}

pub const DEFAULT_DEGREE: usize = 3;
pub const DEFAULT_NUM_BASIS: usize = 7;

impl BasisSpec {
    pub fn new(num_basis: usize, degree: usize, domain: Interval) -> Result<Self> {
        let domain = Interval::new(domain.lo, domain.hi)?;
        if num_basis < degree + 1 {
            return Err(Error::InvalidBasis(format!(
                "num_basis = {num_basis} is smaller than degree + 1 = {}",
                degree + 1
            )));
        }
        let interior = num_basis - degree - 1;
        let mut knots = Vec::with_capacity(num_basis + degree + 1);
        knots.extend(core::iter::repeat(domain.lo).take(degree + 1));
        let step = domain.width() / (interior + 1) as f64;
        knots.extend((1..=interior).map(|j| domain.lo + step * j as f64));
        knots.extend(core::iter::repeat(domain.hi).take(degree + 1));
        Ok(Self {
            degree,
            num_basis,
            domain,
            knots,
        })
    }

    /// Seven cubic B-splines on `domain`.
    pub fn cubic(domain: Interval) -> Result<Self> {
        Self::new(DEFAULT_NUM_BASIS, DEFAULT_DEGREE, domain)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn num_basis(&self) -> usize {
        self.num_basis
    }

    pub fn domain(&self) -> Interval {
        self.domain
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.knots[self.degree + 1..self.num_basis]
    }

    /// Index `s` of the knot span `[knots[s], knots[s+1])` containing `t`.
    fn span(&self, t: f64) -> usize {
        let last = self.num_basis - 1;
        if t >= self.domain.hi {
            return last;
        }
        // First knot strictly greater than t, searched among the candidates.
        let upper = self.knots[self.degree + 1..=last]
            .partition_point(|&k| k <= t);
        self.degree + upper
    }

    /// Nonzero basis values at `t` (Cox–de Boor triangle). Returns the index
    /// of the first nonzero function and writes `degree + 1` values.
    fn nonzero(&self, t: f64, out: &mut [f64]) -> usize {
        let p = self.degree;
        let s = self.span(t);
        let mut left = [0.0f64; 32];
        let mut right = [0.0f64; 32];
        out[0] = 1.0;
        for j in 1..=p {
            left[j] = t - self.knots[s + 1 - j];
            right[j] = self.knots[s + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
        s - p
    }

    /// Writes all `num_basis` values at `t` into `row`.
    pub fn evaluate_into(&self, t: f64, row: &mut [f64]) -> Result<()> {
        if row.len() != self.num_basis {
            return Err(Error::DimensionMismatch(format!(
                "row has length {}, basis has {} functions",
                row.len(),
                self.num_basis
            )));
        }
        if self.degree >= 31 {
            return Err(Error::InvalidBasis(format!("degree {} too large", self.degree)));
        }
        let t = self.domain.check(t)?;
        let mut vals = [0.0f64; 32];
        let first = self.nonzero(t, &mut vals);
        row.iter_mut().for_each(|v| *v = 0.0);
        row[first..=first + self.degree].copy_from_slice(&vals[..=self.degree]);
        Ok(())
    }

    /// `|times| × num_basis` matrix whose row `j` is `B(t_j)ᵀ`.
    pub fn evaluate(&self, times: &[f64]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(times.len(), self.num_basis);
        let mut row = vec![0.0; self.num_basis];
        for (j, &t) in times.iter().enumerate() {
            self.evaluate_into(t, &mut row)?;
            for (k, &v) in row.iter().enumerate() {
                out[(j, k)] = v;
            }
        }
        Ok(out)
    }

    /// Distinct knot spans of positive length.
    pub fn spans(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.knots
            .windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| (w[0], w[1]))
    }
}

/// Ridge penalty `P = ∫ B Bᵀ` and a lower-triangular `R` with `R Rᵀ = P⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyFactor {
    pub penalty: DMatrix<f64>,
    pub scale_sqrt: DMatrix<f64>,
}

impl PenaltyFactor {
    /// Factor a symmetric positive-definite penalty.
    ///
    /// `R` is the inverse transpose of the Cholesky factor of the
    /// index-reversed penalty, reversed back: with `J P J = M Mᵀ`,
    /// `R = J M⁻ᵀ J` is lower triangular and `R Rᵀ = P⁻¹`. No explicit inverse
    /// of `P` is formed.
    pub fn from_penalty(penalty: DMatrix<f64>) -> Result<Self> {
        let k = penalty.nrows();
        if k == 0 || penalty.ncols() != k {
            return Err(Error::DimensionMismatch(format!(
                "penalty must be square and nonempty, got {}x{}",
                penalty.nrows(),
                penalty.ncols()
            )));
        }
        let scale = penalty.amax().max(f64::MIN_POSITIVE);
        if (&penalty - penalty.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidInput("penalty matrix is not symmetric".into()));
        }
        let reversed = DMatrix::from_fn(k, k, |i, j| penalty[(k - 1 - i, k - 1 - j)]);
        let chol = Cholesky::new(reversed)
            .ok_or_else(|| Error::NotPositiveDefinite("ridge penalty".into()))?;
        let m = chol.l();
        let m_t = m.transpose();
        let inv_t = m_t
            .solve_upper_triangular(&DMatrix::identity(k, k))
            .ok_or_else(|| Error::NotPositiveDefinite("ridge penalty factor".into()))?;
        let scale_sqrt = DMatrix::from_fn(k, k, |i, j| inv_t[(k - 1 - i, k - 1 - j)]);
        Ok(Self {
            penalty,
            scale_sqrt,
        })
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let pi = core::f64::consts::PI;
    for i in 0..(n + 1) / 2 {
        let mut x = (pi * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence for P_n(x) and P_{n-1}(x).
            let (mut p0, mut p1) = (1.0, x);
            if n == 1 {
                p1 = x;
                p0 = 1.0;
            } else {
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Number of Gauss–Legendre nodes per knot span; exact for products of two
/// splines of the given degree.
pub fn quadrature_nodes(degree: usize) -> usize {
    (2 * degree + 1).div_ceil(2) + 1
}

/// Ridge penalty `∫ B(t) B(t)ᵀ dt` over the domain, with its factor.
pub fn ridge_penalty(spec: &BasisSpec) -> Result<PenaltyFactor> {
    let k = spec.num_basis();
    let (nodes, weights) = gauss_legendre(quadrature_nodes(spec.degree()));
    let mut gram = DMatrix::zeros(k, k);
    let mut row = vec![0.0; k];
    for (a, b) in spec.spans() {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (x, w) in nodes.iter().zip(&weights) {
            spec.evaluate_into(mid + half * x, &mut row)?;
            let w = w * half;
            for i in 0..k {
                if row[i] == 0.0 {
                    continue;
                }
                for j in 0..k {
                    gram[(i, j)] += w * row[i] * row[j];
                }
            }
        }
    }
    // Exact symmetry for the factorization.
    let gram = (&gram + gram.transpose()) * 0.5;
    PenaltyFactor::from_penalty(gram)
}

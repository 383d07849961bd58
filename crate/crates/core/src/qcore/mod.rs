//! Validated Q-matrices, positive vectors, probability measures and the
//! shared numerical kernels (generator action, matrix exponential action,
//! Perron eigenpairs, stationary distributions).
//!
//! Matrices are dense and row-major throughout.

mod eigen;
mod expm;
mod stationary;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

pub use eigen::{principal_eigenvalue, PerronPair};
pub use expm::{expm_apply, expm_apply_scaled, ScaledVector};
pub use stationary::stationary_distribution;

/// Smallest value treated as strictly positive.
pub const POSITIVE_FLOOR: f64 = 1e-300;

/// Absolute tolerance for row-sum comparisons against zero.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Anything that exposes a dense generator matrix (rows summing to at most zero,
/// non-negative off-diagonal entries).
pub trait Generator {
    fn generator(&self) -> &DMatrix<f64>;

    fn dim(&self) -> usize {
        self.generator().nrows()
    }
}

impl Generator for DMatrix<f64> {
    fn generator(&self) -> &DMatrix<f64> {
        self
    }
}

/// Generator of a killed chain on `{0, .., n-1}`: negative diagonal, strictly
/// positive off-diagonal rates, non-positive row sums.
#[derive(Debug, Clone, PartialEq)]
pub struct QMatrix {
    q: DMatrix<f64>,
    killing: Vec<f64>,
}

impl QMatrix {
    /// Validates a row-major `n x n` array.
    pub fn new(n: usize, row_major: &[f64]) -> Result<Self> {
        validate_q_matrix(n, row_major)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut flat = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        validate_q_matrix(n, &flat)
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.q[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Killing rates `k_i = -sum_j q_ij >= 0`.
    pub fn killing(&self) -> &[f64] {
        &self.killing
    }

    pub fn is_conservative(&self) -> bool {
        self.killing.iter().all(|&k| k == 0.0)
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.n();
        (0..n).all(|i| (0..i).all(|j| self.q[(i, j)] == self.q[(j, i)]))
    }

    /// Row-major copy of the entries.
    pub fn to_row_major(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                out.push(self.q[(i, j)]);
            }
        }
        out
    }

    /// `Q - c I`, i.e. extra uniform killing at rate `c >= 0`.
    pub fn with_uniform_killing(&self, c: f64) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "uniform killing rate must be finite and >= 0, got {c}"
            )));
        }
        let n = self.n();
        let mut flat = self.to_row_major();
        for i in 0..n {
            flat[i * n + i] -= c;
        }
        validate_q_matrix(n, &flat)
    }

    /// `(Qu)(i) = sum_j q_ij u(j)`.
    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        apply_generator(self, u)
    }
}

impl Generator for QMatrix {
    fn generator(&self) -> &DMatrix<f64> {
        &self.q
    }
}

/// Checks the three defining conditions on a row-major matrix and returns the
/// validated generator. Condition (1) is checked over all rows before (2),
/// and (2) before (3), so a single defect is reported as itself.
pub fn validate_q_matrix(n: usize, raw: &[f64]) -> Result<QMatrix> {
    if n < 2 {
        return Err(Error::TooFewStates { min: 2, found: n });
    }
    if raw.len() != n * n {
        return Err(Error::DimensionMismatch {
            expected: n * n,
            found: raw.len(),
        });
    }
    if let Some(index) = raw.iter().position(|x| !x.is_finite()) {
        return Err(Error::NotFinite { index });
    }
    for i in 0..n {
        if -raw[i * n + i] <= POSITIVE_FLOOR {
            return Err(Error::DiagonalNotNegative { index: i });
        }
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && raw[i * n + j] <= POSITIVE_FLOOR {
                return Err(Error::OffDiagonalNotPositive { row: i, col: j });
            }
        }
    }
    let mut killing = Vec::with_capacity(n);
    for i in 0..n {
        let sum: f64 = raw[i * n..(i + 1) * n].iter().sum();
        if sum > ROW_SUM_TOL {
            return Err(Error::RowSumPositive { row: i, sum });
        }
        killing.push(if sum >= -ROW_SUM_TOL { 0.0 } else { -sum });
    }
    Ok(QMatrix {
        q: DMatrix::from_row_slice(n, n, raw),
        killing,
    })
}

/// First violation of each defining condition, checked independently:
/// `[negative diagonal, positive off-diagonal, non-positive row sums]`.
/// Expects a finite `n x n` array.
pub fn condition_violations(n: usize, raw: &[f64]) -> [Option<Error>; 3] {
    let diagonal = (0..n)
        .find(|&i| -raw[i * n + i] <= POSITIVE_FLOOR)
        .map(|index| Error::DiagonalNotNegative { index });
    let off = (0..n * n)
        .find(|&k| k / n != k % n && raw[k] <= POSITIVE_FLOOR)
        .map(|k| Error::OffDiagonalNotPositive {
            row: k / n,
            col: k % n,
        });
    let rows = (0..n)
        .map(|i| (i, raw[i * n..(i + 1) * n].iter().sum::<f64>()))
        .find(|&(_, s)| s > ROW_SUM_TOL)
        .map(|(row, sum)| Error::RowSumPositive { row, sum });
    [diagonal, off, rows]
}

/// Generator action `(Gu)(i) = sum_j g_ij u(j)`.
pub fn apply_generator<G: Generator + ?Sized>(g: &G, u: &[f64]) -> Result<Vec<f64>> {
    let m = g.generator();
    let n = m.nrows();
    if u.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: u.len(),
        });
    }
    Ok((0..n).map(|i| (0..n).map(|j| m[(i, j)] * u[j]).sum()).collect())
}

/// Strictly positive, finite vector over the states.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct PositiveVector(Vec<f64>);

impl PositiveVector {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        for (index, &value) in v.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NotFinite { index });
            }
            if value <= POSITIVE_FLOOR {
                return Err(Error::NotPositive { index, value });
            }
        }
        Ok(Self(v))
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Multiplies every entry by `lambda > 0`.
    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|x| x * lambda).collect())
    }
}

impl std::ops::Index<usize> for PositiveVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Tolerance on the total mass of a probability vector.
pub const MASS_TOL: f64 = 1e-12;

/// A point of the probability simplex over the states.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProbabilityMeasure(Vec<f64>);

impl ProbabilityMeasure {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::NotProbability {
                reason: "empty vector".into(),
            });
        }
        for (index, &value) in p.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NotFinite { index });
            }
            if value < 0.0 {
                return Err(Error::NotProbability {
                    reason: format!("entry {index} = {value:e} is negative"),
                });
            }
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::NotProbability {
                reason: format!("entries sum to {total:.17}"),
            });
        }
        Ok(Self(p))
    }

    /// Normalizes a non-negative vector with positive mass.
    pub fn from_weights(w: &[f64]) -> Result<Self> {
        let total: f64 = w.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::NotProbability {
                reason: format!("weights sum to {total}"),
            });
        }
        Self::new(w.iter().map(|x| x / total).collect())
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// First state without mass, if any.
    pub fn zero_mass_state(&self) -> Option<usize> {
        self.0.iter().position(|&p| p <= 0.0)
    }

    pub fn has_full_support(&self) -> bool {
        self.zero_mass_state().is_none()
    }

    /// Total variation distance `(1/2) sum_i |p_i - q_i|`.
    pub fn total_variation(&self, other: &[f64]) -> f64 {
        0.5 * self.0.iter().zip(other).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }

    /// `(1 - delta) self + delta other`.
    pub fn mix(&self, other: &ProbabilityMeasure, delta: f64) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: other.len(),
            });
        }
        Self::from_weights(
            &self
                .0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| (1.0 - delta) * a + delta * b)
                .collect::<Vec<_>>(),
        )
    }
}

impl std::ops::Index<usize> for ProbabilityMeasure {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_killed_and_conservative() {
        let q = QMatrix::new(2, &[-2.0, 1.0, 1.0, -2.0]).unwrap();
        assert_eq!(q.killing(), &[1.0, 1.0]);
        let q = QMatrix::new(2, &[-1.0, 1.0, 1.0, -1.0]).unwrap();
        assert_eq!(q.killing(), &[0.0, 0.0]);
        assert!(q.is_conservative());
    }

    #[test]
    fn reports_each_condition() {
        assert!(matches!(
            QMatrix::new(2, &[-1.0, 0.0, 1.0, -1.0]),
            Err(Error::OffDiagonalNotPositive { row: 0, col: 1 })
        ));
        assert!(matches!(
            QMatrix::new(2, &[-1.0, 1.0, 1.0, 0.0]),
            Err(Error::DiagonalNotNegative { index: 1 })
        ));
        assert!(matches!(
            QMatrix::new(2, &[-1.0, 1.5, 1.0, -1.0]),
            Err(Error::RowSumPositive { row: 0, .. })
        ));
        assert!(matches!(
            QMatrix::new(1, &[-1.0]),
            Err(Error::TooFewStates { .. })
        ));
        assert!(matches!(
            QMatrix::new(2, &[-1.0, f64::NAN, 1.0, -1.0]),
            Err(Error::NotFinite { index: 1 })
        ));
    }

    #[test]
    fn subnormal_rate_is_not_positive() {
        assert!(matches!(
            QMatrix::new(2, &[-1.0, 1e-310, 1.0, -1.0]),
            Err(Error::OffDiagonalNotPositive { row: 0, col: 1 })
        ));
    }

    #[test]
    fn generator_action() {
        let q = QMatrix::new(2, &[-2.0, 1.0, 1.0, -2.0]).unwrap();
        assert_eq!(q.apply(&[1.0, 1.0]).unwrap(), vec![-1.0, -1.0]);
        assert_eq!(q.apply(&[1.0, 2.0]).unwrap(), vec![0.0, -3.0]);
        let c = QMatrix::new(2, &[-1.0, 1.0, 1.0, -1.0]).unwrap();
        assert_eq!(c.apply(&[1.0, 1.0]).unwrap(), vec![0.0, 0.0]);
        assert!(q.apply(&[1.0]).is_err());
    }

    #[test]
    fn probability_checks() {
        assert!(ProbabilityMeasure::new(vec![0.5, 0.5]).is_ok());
        assert!(ProbabilityMeasure::new(vec![0.5, 0.6]).is_err());
        assert!(ProbabilityMeasure::new(vec![1.5, -0.5]).is_err());
        let p = ProbabilityMeasure::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(p.zero_mass_state(), Some(1));
        assert_eq!(p.total_variation(&[0.0, 1.0]), 1.0);
    }

    #[test]
    fn positive_vector_rejects_zero() {
        assert!(matches!(
            PositiveVector::new(vec![1.0, 0.0]),
            Err(Error::NotPositive { index: 1, .. })
        ));
    }
}

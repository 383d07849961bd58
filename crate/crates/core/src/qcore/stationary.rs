use nalgebra::{DMatrix, DVector};

use super::{Generator, ProbabilityMeasure, POSITIVE_FLOOR, ROW_SUM_TOL};
use crate::error::{Error, Result};

/// Unique invariant law `nu G = 0` of a conservative generator with positive
/// off-diagonal rates.
///
/// The last column of `G` is replaced by ones (the normalization), and the
/// transposed system is solved by LU with one step of iterative refinement.
pub fn stationary_distribution<G: Generator + ?Sized>(g: &G) -> Result<ProbabilityMeasure> {
    let g = g.generator();
    let n = g.nrows();
    if g.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: g.ncols(),
        });
    }
    if n < 2 {
        return Err(Error::TooFewStates { min: 2, found: n });
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && g[(i, j)] <= POSITIVE_FLOOR {
                return Err(Error::OffDiagonalNotPositive { row: i, col: j });
            }
        }
        let sum: f64 = g.row(i).iter().sum();
        let scale = g.row(i).amax().max(1.0);
        if !(sum.abs() <= ROW_SUM_TOL * scale) {
            return Err(Error::NotConservative { row: i, sum });
        }
    }

    // nu B = e_n  with B = G whose last column is all ones  <=>  B^T nu^T = e_n
    let mut bt: DMatrix<f64> = g.transpose();
    for j in 0..n {
        bt[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let lu = bt.clone().lu();
    let mut nu = lu.solve(&rhs).ok_or(Error::Singular("stationary distribution"))?;
    let r = &rhs - &bt * &nu;
    if let Some(corr) = lu.solve(&r) {
        nu += corr;
    }
    if let Some(index) = nu.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::NotPositive {
            index,
            value: nu[index],
        });
    }
    ProbabilityMeasure::from_weights(nu.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_state_balance() {
        let g = DMatrix::from_row_slice(2, 2, &[-2.0, 2.0, 0.5, -0.5]);
        let nu = stationary_distribution(&g).unwrap();
        assert!((nu[0] - 0.2).abs() < 1e-15);
        assert!((nu[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn symmetric_is_uniform() {
        let g = DMatrix::from_row_slice(3, 3, &[-3.0, 1.0, 2.0, 1.0, -1.5, 0.5, 2.0, 0.5, -2.5]);
        let nu = stationary_distribution(&g).unwrap();
        for i in 0..3 {
            assert!((nu[i] - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn killed_generator_rejected() {
        let g = DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 1.0, -2.0]);
        assert!(matches!(
            stationary_distribution(&g),
            Err(Error::NotConservative { row: 0, .. })
        ));
    }
}

use nalgebra::{DMatrix, DVector};

use super::{PositiveVector, POSITIVE_FLOOR};
use crate::error::{Error, Result};

const RAYLEIGH_TOL: f64 = 1e-13;
const MAX_POWER_ITERS: usize = 500_000;
const NEWTON_STEPS: usize = 8;

/// Perron root of a matrix with positive off-diagonal entries and its
/// positive right eigenvector, normalized so that `vector[0] == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerronPair {
    pub lambda: f64,
    pub vector: PositiveVector,
    pub iterations: usize,
}

/// Real eigenvalue of maximal real part of `m` together with its positive
/// right eigenvector.
///
/// Power iteration runs on `m + cI` with `c = max_i |m_ii| + 1`, a strictly
/// positive matrix, until successive Rayleigh quotients agree to `1e-13`.
/// The pair is then polished by Newton steps on `(m - lambda I) w = 0`,
/// `w_0 = 1`.
pub fn principal_eigenvalue(m: &DMatrix<f64>) -> Result<PerronPair> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: m.ncols(),
        });
    }
    if n == 0 {
        return Err(Error::TooFewStates { min: 1, found: 0 });
    }
    for i in 0..n {
        for j in 0..n {
            let x = m[(i, j)];
            if !x.is_finite() {
                return Err(Error::NotFinite { index: i * n + j });
            }
            if i != j && x <= POSITIVE_FLOOR {
                return Err(Error::OffDiagonalNotPositive { row: i, col: j });
            }
        }
    }

    let shift = (0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max) + 1.0;
    let mut a = m.clone();
    for i in 0..n {
        a[(i, i)] += shift;
    }

    let mut w = DVector::from_element(n, 1.0);
    let mut rho_prev = f64::INFINITY;
    let mut iterations = 0;
    loop {
        iterations += 1;
        let y = &a * &w;
        let rho = w.dot(&y) / w.dot(&w);
        let norm = y.amax();
        w = y / norm;
        if (rho - rho_prev).abs() <= RAYLEIGH_TOL * rho.abs().max(1.0) {
            rho_prev = rho;
            break;
        }
        rho_prev = rho;
        if iterations >= MAX_POWER_ITERS {
            return Err(Error::NotConverged {
                what: "power iteration",
                iterations,
                residual: (rho - rho_prev).abs(),
            });
        }
    }

    let mut lambda = rho_prev - shift;
    w /= w[0];
    polish(m, &mut lambda, &mut w);

    let residual = (m * &w - &w * lambda).amax();
    let scale = m.amax().max(1.0) * w.amax();
    if !(residual <= 1e-9 * scale) {
        return Err(Error::NotConverged {
            what: "principal eigenpair",
            iterations,
            residual,
        });
    }
    let vector = PositiveVector::new(w.iter().copied().collect())?;
    Ok(PerronPair {
        lambda,
        vector,
        iterations,
    })
}

/// Newton refinement of an approximate eigenpair with the normalization `w_0 = 1`.
fn polish(m: &DMatrix<f64>, lambda: &mut f64, w: &mut DVector<f64>) {
    let n = m.nrows();
    let mut best = (m * &*w - &*w * *lambda).amax();
    for _ in 0..NEWTON_STEPS {
        let mut jac = DMatrix::zeros(n + 1, n + 1);
        let mut rhs = DVector::zeros(n + 1);
        let r = m * &*w - &*w * *lambda;
        for i in 0..n {
            for j in 0..n {
                jac[(i, j)] = m[(i, j)];
            }
            jac[(i, i)] -= *lambda;
            jac[(i, n)] = -w[i];
            rhs[i] = -r[i];
        }
        jac[(n, 0)] = 1.0;
        rhs[n] = 1.0 - w[0];
        let Some(step) = jac.lu().solve(&rhs) else {
            return;
        };
        let mut w_new = w.clone();
        for i in 0..n {
            w_new[i] += step[i];
        }
        let lambda_new = *lambda + step[n];
        let res = (m * &w_new - &w_new * lambda_new).amax();
        if !(res < best) {
            return;
        }
        best = res;
        *w = w_new;
        *lambda = lambda_new;
        if step.amax() <= 1e-15 * (1.0 + lambda.abs()) {
            return;
        }
    }
}

//! Exponential tilting of a killed chain by a positive function `phi`.
//!
//! The tilted generator `q^phi_ij = q_ij phi_j / phi_i` (`i != j`) with
//! diagonal chosen to make every row sum to zero is the generator of the
//! semigroup `P^phi_t f(i) = E_i[L^phi_t f(X_t)]`, where
//! `L^phi_t = phi(X_t)/phi(X_0) exp(-int_0^t (Q phi / phi)(X_s) ds) 1{t < zeta}`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::qcore::{
    apply_generator, stationary_distribution, Generator, PositiveVector, ProbabilityMeasure, QMatrix,
};
use crate::simulate::PathRecord;

#[derive(Debug, Clone, PartialEq)]
pub struct TiltedGenerator {
    base: QMatrix,
    phi: PositiveVector,
    qphi: DMatrix<f64>,
}

impl TiltedGenerator {
    pub fn base(&self) -> &QMatrix {
        &self.base
    }

    pub fn phi(&self) -> &PositiveVector {
        &self.phi
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.qphi
    }

    /// `L^phi f = Q(f phi)/phi - (Q phi/phi) f`, evaluated from the base generator.
    pub fn apply_via_base(&self, f: &[f64]) -> Result<Vec<f64>> {
        let n = self.base.n();
        if f.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: f.len(),
            });
        }
        let phi = self.phi.as_slice();
        let fphi: Vec<f64> = f.iter().zip(phi).map(|(a, b)| a * b).collect();
        let q_fphi = self.base.apply(&fphi)?;
        let q_phi = self.base.apply(phi)?;
        Ok((0..n)
            .map(|i| q_fphi[i] / phi[i] - q_phi[i] / phi[i] * f[i])
            .collect())
    }
}

impl Generator for TiltedGenerator {
    fn generator(&self) -> &DMatrix<f64> {
        &self.qphi
    }
}

/// Builds `Q^phi`. Diagonals are set to minus the off-diagonal row sum, so
/// every row sums to zero up to one rounding of that sum.
pub fn tilt_generator(q: &QMatrix, phi: &PositiveVector) -> Result<TiltedGenerator> {
    let n = q.n();
    if phi.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: phi.len(),
        });
    }
    let mut qphi = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut off = 0.0;
        for j in (0..n).filter(|&j| j != i) {
            // the ratio first: exact scalings of phi then leave Q^phi bit-identical
            let v = q.rate(i, j) * (phi[j] / phi[i]);
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "tilted rate ({i}, {j}) = {v:e} is not a positive finite number"
                )));
            }
            qphi[(i, j)] = v;
            off += v;
        }
        qphi[(i, i)] = -off;
    }
    Ok(TiltedGenerator {
        base: q.clone(),
        phi: phi.clone(),
        qphi,
    })
}

/// Invariant law `nu_phi` of the tilted chain.
pub fn invariant_of_tilt(t: &TiltedGenerator) -> Result<ProbabilityMeasure> {
    stationary_distribution(&t.qphi)
}

/// `(Q phi)(i) / phi(i)` for every state.
pub fn log_drift(q: &QMatrix, phi: &PositiveVector) -> Result<Vec<f64>> {
    let q_phi = apply_generator(q, phi.as_slice())?;
    Ok(q_phi.iter().zip(phi.as_slice()).map(|(a, b)| a / b).collect())
}

/// `log L^phi_t` along a path, or `None` when the path is dead by time `t`.
///
/// The time integral is summed exactly over the sojourn intervals.
pub fn log_girsanov_weight(
    q: &QMatrix,
    phi: &PositiveVector,
    path: &PathRecord,
    t: f64,
) -> Result<Option<f64>> {
    let drift = log_drift(q, phi)?;
    log_weight_with_drift(phi, &drift, path, t)
}

pub(crate) fn log_weight_with_drift(
    phi: &PositiveVector,
    drift: &[f64],
    path: &PathRecord,
    t: f64,
) -> Result<Option<f64>> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidTime(t));
    }
    if !path.alive_at(t) {
        return Ok(None);
    }
    if t > path.horizon() {
        return Err(Error::HorizonExceeded {
            t,
            horizon: path.horizon(),
        });
    }
    let integral: f64 = path
        .sojourns_until(t)
        .map(|s| drift[s.state] * (s.end - s.start))
        .sum();
    let end = path.state_at(t);
    let start = path.initial_state();
    Ok(Some(phi[end].ln() - phi[start].ln() - integral))
}

/// `L^phi_t` along a sampled path; zero when `zeta <= t`.
pub fn girsanov_weight(q: &QMatrix, phi: &PositiveVector, path: &PathRecord, t: f64) -> Result<f64> {
    Ok(log_girsanov_weight(q, phi, path, t)?.map_or(0.0, f64::exp))
}

use nalgebra::DMatrix;

use super::Generator;
use crate::error::{Error, Result};

/// Poisson tail mass neglected per uniformization step.
const POISSON_TAIL: f64 = 1e-16;

/// Largest Poisson mean handled in one step; keeps `exp(-mean)` far from underflow.
const MAX_STEP_MEAN: f64 = 30.0;

const MAX_STEPS: f64 = 1e7;

/// A vector stored as `values * exp(log_scale)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledVector {
    pub values: Vec<f64>,
    pub log_scale: f64,
}

impl ScaledVector {
    /// `log |x_i|`, finite even when `x_i` itself would underflow.
    pub fn log_abs(&self, i: usize) -> f64 {
        self.values[i].abs().ln() + self.log_scale
    }
}

/// `exp(tG) v` by uniformization.
///
/// `G` must have a non-positive diagonal and non-negative off-diagonal
/// entries. With `eta = max_i(-g_ii)` and `P = I + G/eta`,
/// `exp(tG) = sum_k Poisson(eta t; k) P^k`; long horizons are split into steps
/// with `eta dt <= 30` and each step's series is truncated once the neglected
/// Poisson mass is below `1e-16`.
pub fn expm_apply<G: Generator + ?Sized>(g: &G, t: f64, v: &[f64]) -> Result<Vec<f64>> {
    let out = uniformize(g.generator(), t, v, false)?;
    if let Some(i) = out.values.iter().position(|x| !x.is_finite()) {
        return Err(Error::Overflow(format!("entry {i} is not finite at t = {t}")));
    }
    Ok(out.values)
}

/// Same as [`expm_apply`] but renormalizes after every step so that results
/// decaying like `exp(-ct)` over long horizons keep full relative precision.
pub fn expm_apply_scaled<G: Generator + ?Sized>(g: &G, t: f64, v: &[f64]) -> Result<ScaledVector> {
    uniformize(g.generator(), t, v, true)
}

fn uniformize(g: &DMatrix<f64>, t: f64, v: &[f64], renormalize: bool) -> Result<ScaledVector> {
    let n = g.nrows();
    if v.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: v.len(),
        });
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidTime(t));
    }
    let mut eta = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            let x = g[(i, j)];
            if !x.is_finite() || (i == j && x > 0.0) || (i != j && x < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "not a generator: entry ({i}, {j}) = {x}"
                )));
            }
        }
        eta = eta.max(-g[(i, i)]);
    }
    let mut x = v.to_vec();
    let mut log_scale = 0.0;
    if t == 0.0 || eta == 0.0 {
        return Ok(ScaledVector { values: x, log_scale });
    }

    let steps = (eta * t / MAX_STEP_MEAN).ceil().max(1.0);
    if steps > MAX_STEPS {
        return Err(Error::Overflow(format!(
            "eta * t = {:e} needs more than {MAX_STEPS:e} steps",
            eta * t
        )));
    }
    let steps = steps as usize;
    let mean = eta * t / steps as f64;
    let weights = poisson_weights(mean);

    // P = I + G / eta
    let mut p = g / eta;
    for i in 0..n {
        p[(i, i)] += 1.0;
    }

    let mut term = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut acc = vec![0.0; n];
    for _ in 0..steps {
        term.copy_from_slice(&x);
        for (a, &tk) in acc.iter_mut().zip(&term) {
            *a = weights[0] * tk;
        }
        for &w in &weights[1..] {
            for i in 0..n {
                next[i] = (0..n).map(|j| p[(i, j)] * term[j]).sum();
            }
            std::mem::swap(&mut term, &mut next);
            for (a, &tk) in acc.iter_mut().zip(&term) {
                *a += w * tk;
            }
        }
        x.copy_from_slice(&acc);
        if renormalize {
            let m = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if m > 0.0 && m.is_finite() {
                x.iter_mut().for_each(|v| *v /= m);
                log_scale += m.ln();
            }
        }
    }
    Ok(ScaledVector { values: x, log_scale })
}

/// Poisson(mean) probabilities `w_0..w_K`, stopped once a geometric bound on
/// the remaining mass is at most `POISSON_TAIL` and then rescaled to sum to
/// one, so that stochastic `P` maps constants to constants.
fn poisson_weights(mean: f64) -> Vec<f64> {
    let mut w = vec![(-mean).exp()];
    loop {
        let k = w.len() - 1;
        let r = mean / (k + 1) as f64;
        let last = w[k];
        if k as f64 >= mean && r < 1.0 && last * r / (1.0 - r) <= POISSON_TAIL {
            break;
        }
        w.push(last * r);
        if w.len() > 10_000 {
            break;
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

//! The positive rational system
//!
//! ```text
//! row 1:      sum_j a_1j x_j              = sum_j b_1j / x_j
//! row i >= 2: sum_j a_ij y_j / x_{i-1}   = x_{i-1} sum_j b_ij / y_j
//! ```
//!
//! where `y` is `x` with its `(i-1)`-th entry replaced by `1`, and its use for
//! balancing a generator: find `alpha > 0` with
//! `sum_j q_ij (alpha_j / alpha_i) beta_j = sum_j q_ji (alpha_i / alpha_j) beta_j`
//! for every state `i`.
//!
//! Solutions are found by minimizing `F = sum_i f_i^2` over `x = exp(y)` with
//! Levenberg-Marquardt and deterministic multistart.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::qcore::{PositiveVector, QMatrix, POSITIVE_FLOOR};

/// Positive coefficient matrices `a`, `b` of the system.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemCoefficients {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl SystemCoefficients {
    /// Requires square `n x n` matrices with `n >= 3` and strictly positive entries.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        Self::with_min_size(a, b, 3)
    }

    pub fn from_row_major(n: usize, a: &[f64], b: &[f64]) -> Result<Self> {
        if a.len() != n * n || b.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: if a.len() != n * n { a.len() } else { b.len() },
            });
        }
        Self::new(DMatrix::from_row_slice(n, n, a), DMatrix::from_row_slice(n, n, b))
    }

    // The two-unknown form arises from balancing three states.
    pub(crate) fn with_min_size(a: DMatrix<f64>, b: DMatrix<f64>, min: usize) -> Result<Self> {
        let n = a.nrows();
        if n < min {
            return Err(Error::TooFewStates { min, found: n });
        }
        for m in [&a, &b] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: if m.nrows() != n { m.nrows() } else { m.ncols() },
                });
            }
        }
        for (index, &v) in a.iter().chain(b.iter()).enumerate() {
            if !v.is_finite() {
                return Err(Error::NotFinite { index });
            }
            if v <= POSITIVE_FLOOR {
                return Err(Error::NotPositive { index, value: v });
            }
        }
        Ok(Self { a, b })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    fn check(&self, x: &PositiveVector) -> Result<()> {
        if x.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                found: x.len(),
            });
        }
        Ok(())
    }

    fn eval(&self, x: &[f64], f: &mut [f64]) {
        let n = self.n();
        f[0] = (0..n)
            .map(|j| self.a[(0, j)] * x[j] - self.b[(0, j)] / x[j])
            .sum();
        for i in 1..n {
            let p = i - 1;
            let (sa, sb) = self.row_sums(i, x);
            f[i] = sa / x[p] - x[p] * sb;
        }
    }

    /// `(sum_j a_ij y_j, sum_j b_ij / y_j)` for row `i >= 1`; independent of `x_{i-1}`.
    fn row_sums(&self, i: usize, x: &[f64]) -> (f64, f64) {
        let p = i - 1;
        let mut sa = 0.0;
        let mut sb = 0.0;
        for j in 0..self.n() {
            let y = if j == p { 1.0 } else { x[j] };
            sa += self.a[(i, j)] * y;
            sb += self.b[(i, j)] / y;
        }
        (sa, sb)
    }

    /// `jac[(i, k)] = d f_i / d x_k`.
    fn eval_jacobian(&self, x: &[f64], jac: &mut DMatrix<f64>) {
        let n = self.n();
        for k in 0..n {
            jac[(0, k)] = self.a[(0, k)] + self.b[(0, k)] / (x[k] * x[k]);
        }
        for i in 1..n {
            let p = i - 1;
            for k in 0..n {
                jac[(i, k)] = if k == p {
                    let (sa, sb) = self.row_sums(i, x);
                    -sa / (x[p] * x[p]) - sb
                } else {
                    self.a[(i, k)] / x[p] + x[p] * self.b[(i, k)] / (x[k] * x[k])
                };
            }
        }
    }
}

/// `f_i(x)` for every row of the system.
pub fn residuals(c: &SystemCoefficients, x: &PositiveVector) -> Result<Vec<f64>> {
    c.check(x)?;
    let mut f = vec![0.0; c.n()];
    c.eval(x.as_slice(), &mut f);
    Ok(f)
}

/// `F(x) = sum_i f_i(x)^2`.
pub fn objective(c: &SystemCoefficients, x: &PositiveVector) -> Result<f64> {
    Ok(residuals(c, x)?.iter().map(|f| f * f).sum())
}

/// `J[(i, k)] = d f_i / d x_k`. Entries are positive except `d f_{k+1} / d x_k`
/// (one per column `k < n-1`), which is negative.
pub fn jacobian(c: &SystemCoefficients, x: &PositiveVector) -> Result<DMatrix<f64>> {
    c.check(x)?;
    let mut jac = DMatrix::zeros(c.n(), c.n());
    c.eval_jacobian(x.as_slice(), &mut jac);
    Ok(jac)
}

/// `dF/dx_k = 2 sum_j f_j d f_j / d x_k`.
pub fn objective_gradient(c: &SystemCoefficients, x: &PositiveVector) -> Result<Vec<f64>> {
    let f = residuals(c, x)?;
    let jac = jacobian(c, x)?;
    Ok((0..c.n())
        .map(|k| 2.0 * (0..c.n()).map(|j| f[j] * jac[(j, k)]).sum::<f64>())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveOptions {
    /// Target for `max_i |f_i|`.
    pub tol: f64,
    /// Iteration cap per start.
    pub max_iters: usize,
    /// Additional starts after the first (which is `x = 1`).
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 500,
            restarts: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub x: PositiveVector,
    pub residual_inf: f64,
    /// Total iterations over all starts.
    pub iterations: usize,
    pub restarts_used: usize,
    pub converged: bool,
}

/// Abort a start once any log-coordinate leaves `[-60, 60]`.
const LOG_BOUND: f64 = 60.0;
const STAGNATION_WINDOW: usize = 20;
const STAGNATION_REL: f64 = 1e-16;
const POLISH_STEPS: usize = 3;

/// Finds a positive zero of the system.
///
/// Returns [`Error::SolverNotConverged`] carrying the best point found when
/// no start reaches `opts.tol`.
pub fn solve_system(c: &SystemCoefficients, opts: &SolveOptions) -> Result<SolveReport> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {}",
            opts.tol
        )));
    }
    let n = c.n();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut iterations = 0;
    for start in 0..=opts.restarts {
        let y0 = start_point(n, opts.seed, start);
        let run = levenberg_marquardt(c, y0, opts);
        iterations += run.iterations;
        let better = best.as_ref().is_none_or(|(_, r)| run.residual_inf < *r);
        if better {
            best = Some((run.x, run.residual_inf));
        }
        if run.residual_inf <= opts.tol {
            return Ok(SolveReport {
                x: PositiveVector::new(best.unwrap().0)?,
                residual_inf: run.residual_inf,
                iterations,
                restarts_used: start,
                converged: true,
            });
        }
    }
    let (x, residual_inf) = best.expect("at least one start");
    let report = SolveReport {
        x: PositiveVector::new(x)?,
        residual_inf,
        iterations,
        restarts_used: opts.restarts,
        converged: false,
    };
    Err(Error::SolverNotConverged(Box::new(report)))
}

fn start_point(n: usize, seed: u64, start: usize) -> Vec<f64> {
    if start == 0 {
        return vec![0.0; n];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(start as u64);
    (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect()
}

struct Run {
    x: Vec<f64>,
    residual_inf: f64,
    iterations: usize,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// One LM run in log coordinates `x = exp(y)` with Nielsen damping updates.
fn levenberg_marquardt(c: &SystemCoefficients, mut y: Vec<f64>, opts: &SolveOptions) -> Run {
    let n = c.n();
    let mut x: Vec<f64> = y.iter().map(|v| v.exp()).collect();
    let mut f = vec![0.0; n];
    c.eval(&x, &mut f);
    let mut cost = 0.5 * f.iter().map(|v| v * v).sum::<f64>();
    let mut jac = DMatrix::zeros(n, n);
    let mut history = vec![cost];
    let mut damping: Option<f64> = None;
    let mut nu = 2.0;
    let mut iterations = 0;

    let mut x_trial = vec![0.0; n];
    let mut f_trial = vec![0.0; n];

    while iterations < opts.max_iters {
        if inf_norm(&f) <= opts.tol || !cost.is_finite() {
            break;
        }
        iterations += 1;
        c.eval_jacobian(&x, &mut jac);
        // chain rule for x = exp(y)
        for k in 0..n {
            for i in 0..n {
                jac[(i, k)] *= x[k];
            }
        }
        let fv = DVector::from_column_slice(&f);
        let g = jac.tr_mul(&fv);
        let a = jac.tr_mul(&jac);
        let mu = *damping.get_or_insert_with(|| 1e-3 * a.diagonal().amax());

        let mut lhs = a.clone();
        for i in 0..n {
            lhs[(i, i)] += mu;
        }
        let step = match lhs.clone().cholesky() {
            Some(ch) => ch.solve(&(-&g)),
            None => match lhs.lu().solve(&(-&g)) {
                Some(s) => s,
                None => break,
            },
        };

        let mut out_of_bounds = false;
        for i in 0..n {
            let yi = y[i] + step[i];
            if yi.abs() > LOG_BOUND {
                out_of_bounds = true;
            }
            x_trial[i] = yi.exp();
        }
        if out_of_bounds {
            break;
        }
        c.eval(&x_trial, &mut f_trial);
        let cost_trial = 0.5 * f_trial.iter().map(|v| v * v).sum::<f64>();
        let predicted = 0.5 * step.dot(&(step.scale(mu) - &g));
        let rho = if predicted > 0.0 {
            (cost - cost_trial) / predicted
        } else {
            -1.0
        };

        if rho > 0.0 && cost_trial.is_finite() {
            for i in 0..n {
                y[i] += step[i];
            }
            std::mem::swap(&mut x, &mut x_trial);
            std::mem::swap(&mut f, &mut f_trial);
            cost = cost_trial;
            damping = Some(mu * (1.0_f64 / 3.0).max(1.0 - (2.0 * rho - 1.0).powi(3)));
            nu = 2.0;
        } else {
            damping = Some(mu * nu);
            nu *= 2.0;
        }

        history.push(cost);
        if history.len() > STAGNATION_WINDOW {
            let past = history[history.len() - 1 - STAGNATION_WINDOW];
            if past - cost <= STAGNATION_REL * past {
                break;
            }
        }
    }

    if inf_norm(&f) <= opts.tol {
        iterations += polish(c, &mut x, &mut f);
    }
    Run {
        residual_inf: inf_norm(&f),
        x,
        iterations,
    }
}

/// Plain Newton steps on a converged point, kept only while they reduce `max |f_i|`.
fn polish(c: &SystemCoefficients, x: &mut [f64], f: &mut [f64]) -> usize {
    let n = c.n();
    let mut jac = DMatrix::zeros(n, n);
    let mut x_new = vec![0.0; n];
    let mut f_new = vec![0.0; n];
    let mut steps = 0;
    for _ in 0..POLISH_STEPS {
        c.eval_jacobian(x, &mut jac);
        let rhs = -DVector::from_column_slice(f);
        let Some(dx) = jac.clone().lu().solve(&rhs) else {
            break;
        };
        for i in 0..n {
            x_new[i] = x[i] + dx[i];
        }
        if x_new.iter().any(|v| !(*v > POSITIVE_FLOOR)) {
            break;
        }
        c.eval(&x_new, &mut f_new);
        if !(inf_norm(&f_new) < inf_norm(f)) {
            break;
        }
        steps += 1;
        x.copy_from_slice(&x_new);
        f.copy_from_slice(&f_new);
    }
    steps
}

/// Output of [`balance`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Balance {
    /// Balancing weights with `alpha[0] == 1`.
    pub alpha: PositiveVector,
    /// Residual of every balancing equation, including the last (implied) one.
    pub residuals: Vec<f64>,
    pub residual_inf: f64,
    pub report: SolveReport,
}

/// Residual of the balancing equation of every state:
/// `sum_{j != i} q_ij beta_j alpha_j / alpha_i - sum_{j != i} q_ji beta_j alpha_i / alpha_j`.
pub fn balance_residuals(q: &QMatrix, alpha: &PositiveVector, beta: &PositiveVector) -> Result<Vec<f64>> {
    let n = q.n();
    for v in [alpha, beta] {
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: v.len(),
            });
        }
    }
    Ok((0..n)
        .map(|i| {
            let mut lhs = 0.0;
            let mut rhs = 0.0;
            for j in (0..n).filter(|&j| j != i) {
                lhs += q.rate(i, j) * beta[j] * alpha[j] / alpha[i];
                rhs += q.rate(j, i) * beta[j] * alpha[i] / alpha[j];
            }
            lhs - rhs
        })
        .collect())
}

/// Coefficients of the `(n-1)`-unknown system equivalent to the first `n-1`
/// balancing equations under `x_{s-1} = alpha_s / alpha_0`.
///
/// Row `r >= 1` is the equation of state `r` divided through by `alpha_r`;
/// its column `r-1` carries the `alpha_0` terms and every other column `k`
/// the `alpha_{k+1}` terms, so all coefficients are off-diagonal rates times
/// `beta` and hence positive.
pub fn balance_coefficients(q: &QMatrix, beta: &PositiveVector) -> Result<SystemCoefficients> {
    let n = q.n();
    if beta.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: beta.len(),
        });
    }
    if n < 3 {
        return Err(Error::TooFewStates { min: 3, found: n });
    }
    let m = n - 1;
    let mut a = DMatrix::zeros(m, m);
    let mut b = DMatrix::zeros(m, m);
    for k in 0..m {
        a[(0, k)] = q.rate(0, k + 1) * beta[k + 1];
        b[(0, k)] = q.rate(k + 1, 0) * beta[k + 1];
    }
    for r in 1..m {
        for k in 0..m {
            if k == r - 1 {
                a[(r, k)] = q.rate(r, 0) * beta[0];
                b[(r, k)] = q.rate(0, r) * beta[0];
            } else {
                a[(r, k)] = q.rate(r, k + 1) * beta[k + 1];
                b[(r, k)] = q.rate(k + 1, r) * beta[k + 1];
            }
        }
    }
    SystemCoefficients::with_min_size(a, b, 2)
}

/// Finds `alpha > 0`, `alpha[0] = 1`, balancing `q` against `beta`.
///
/// Two states use the closed form `alpha_1 = sqrt(q_10 / q_01)`. Larger
/// chains go through [`balance_coefficients`] and the system solver. The last
/// equation is implied by the others (`sum_i beta_i R_i = 0`), so the inner
/// tolerance is tightened by `beta_last / sum_{i < last} beta_i` and all
/// `n` residuals are checked afterwards.
pub fn balance(q: &QMatrix, beta: &PositiveVector, opts: &SolveOptions) -> Result<Balance> {
    let n = q.n();
    if beta.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: beta.len(),
        });
    }
    let report = if n == 2 {
        let ratio = (q.rate(1, 0) / q.rate(0, 1)).sqrt();
        SolveReport {
            x: PositiveVector::new(vec![ratio])?,
            residual_inf: 0.0,
            iterations: 0,
            restarts_used: 0,
            converged: true,
        }
    } else {
        let coeffs = balance_coefficients(q, beta)?;
        let rest: f64 = beta.as_slice()[..n - 1].iter().sum();
        let inner = SolveOptions {
            tol: opts.tol * (beta[n - 1] / rest).min(1.0),
            ..*opts
        };
        solve_system(&coeffs, &inner)?
    };

    let mut alpha = vec![1.0];
    alpha.extend_from_slice(report.x.as_slice());
    let alpha = PositiveVector::new(alpha)?;
    let residuals = balance_residuals(q, &alpha, beta)?;
    let residual_inf = inf_norm(&residuals);
    let out = Balance {
        alpha,
        residuals,
        residual_inf,
        report,
    };
    if residual_inf > opts.tol {
        let mut report = out.report;
        report.residual_inf = residual_inf;
        report.converged = false;
        return Err(Error::SolverNotConverged(Box::new(report)));
    }
    Ok(out)
}

/// `|| A^{-1} Q A beta - A Q^T A^{-1} beta ||_inf` with `A = diag(alpha)`.
pub fn matrix_form_residual(q: &QMatrix, alpha: &PositiveVector, beta: &PositiveVector) -> Result<f64> {
    let n = q.n();
    for v in [alpha, beta] {
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: v.len(),
            });
        }
    }
    let a = DVector::from_column_slice(alpha.as_slice());
    let b = DVector::from_column_slice(beta.as_slice());
    let qm = q.matrix();
    let lhs = (qm * a.component_mul(&b)).component_div(&a);
    let rhs = (qm.transpose() * b.component_div(&a)).component_mul(&a);
    Ok((lhs - rhs).amax())
}

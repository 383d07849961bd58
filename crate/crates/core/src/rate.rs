//! The occupation-measure rate function
//!
//! ```text
//! I(mu) = -inf_{u > 0} sum_i mu_i (Qu)(i) / u(i)
//! ```
//!
//! evaluated three ways:
//!
//! - [`rate_direct`]: the inner infimum itself. With `u = exp(v)` the objective
//!   is `sum_i mu_i q_ii + sum_{i != j} mu_i q_ij exp(v_j - v_i)`, a convex
//!   function of `v`, minimized by damped Newton with `v_0 = 0`.
//! - [`rate_balanced`]: the stationarity equations of the inner problem, solved
//!   through diagonal balancing with `beta = sqrt(n mu)`.
//! - [`rate_legendre`]: the convex dual `sup_V <V, mu> - lambda_max(Q + diag V)`.
//!   Used only as an independent check.
//!
//! [`survival_rate_variational`] maximizes `-I` over the simplex, which gives
//! the exponential decay rate of the survival probability.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nlsolver::{balance, SolveOptions};
use crate::qcore::{principal_eigenvalue, PositiveVector, ProbabilityMeasure, QMatrix};
use crate::simulate::replica_rng;
use crate::tilt::{invariant_of_tilt, tilt_generator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Direct,
    Balanced,
    Legendre,
}

impl Route {
    pub fn name(self) -> &'static str {
        match self {
            Route::Direct => "direct",
            Route::Balanced => "balanced",
            Route::Legendre => "legendre",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateOptions {
    /// Stationarity target for the direct route (max-norm of the gradient).
    pub direct_tol: f64,
    /// Stationarity target for the dual route, `max |mu - nu_V|`.
    pub legendre_tol: f64,
    pub max_iters: usize,
    /// Starts for the direct route (the first is `u = 1`).
    pub starts: usize,
    /// Starts for the outer maximization of [`survival_rate_variational`].
    pub outer_starts: usize,
    pub seed: u64,
    pub solve: SolveOptions,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self {
            direct_tol: 1e-10,
            legendre_tol: 1e-9,
            max_iters: 500,
            starts: 3,
            outer_starts: 8,
            seed: 0,
            solve: SolveOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateDiagnostics {
    pub iterations: usize,
    /// Final stationarity measure of the route.
    pub stationarity_residual: f64,
    pub starts: usize,
    /// Set when iterates ran off to infinity (boundary measures); the value is then only a bound.
    pub diverging: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateResult {
    pub value: f64,
    pub route: Route,
    /// Optimizing `u` (direct), `phi` (balanced) or `exp(V)` (legendre), first entry 1.
    pub witness: PositiveVector,
    pub converged: bool,
    pub diagnostics: RateDiagnostics,
}

/// `sum_i mu_i (Qu)(i) / u(i)`.
pub fn inner_objective(q: &QMatrix, mu: &ProbabilityMeasure, u: &PositiveVector) -> Result<f64> {
    let n = q.n();
    if mu.len() != n || u.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: if mu.len() != n { mu.len() } else { u.len() },
        });
    }
    let qu = q.apply(u.as_slice())?;
    Ok((0..n).map(|i| mu[i] * qu[i] / u[i]).sum())
}

fn check_mu(q: &QMatrix, mu: &ProbabilityMeasure) -> Result<()> {
    if mu.len() != q.n() {
        return Err(Error::DimensionMismatch {
            expected: q.n(),
            found: mu.len(),
        });
    }
    Ok(())
}

struct Inner {
    v: Vec<f64>,
    value: f64,
    grad_inf: f64,
    iterations: usize,
    converged: bool,
    diverging: bool,
}

/// Bound on the log-coordinates of the inner problem.
const V_BOUND: f64 = 300.0;

/// Objective, reduced gradient and reduced Hessian (coordinates `1..n`) at `v`.
fn inner_terms(q: &QMatrix, mu: &[f64], v: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
    let n = q.n();
    let mut value: f64 = (0..n).map(|i| mu[i] * q.rate(i, i)).sum();
    let mut grad = vec![0.0; n];
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        if mu[i] == 0.0 {
            continue;
        }
        for j in (0..n).filter(|&j| j != i) {
            let c = mu[i] * q.rate(i, j) * (v[j] - v[i]).exp();
            value += c;
            grad[j] += c;
            grad[i] -= c;
            hess[(i, i)] += c;
            hess[(j, j)] += c;
            hess[(i, j)] -= c;
            hess[(j, i)] -= c;
        }
    }
    let g = DVector::from_iterator(n - 1, grad[1..].iter().copied());
    let h = hess.view((1, 1), (n - 1, n - 1)).into_owned();
    (value, g, h)
}

fn inner_value(q: &QMatrix, mu: &[f64], v: &[f64]) -> f64 {
    let n = q.n();
    let mut value: f64 = (0..n).map(|i| mu[i] * q.rate(i, i)).sum();
    for i in (0..n).filter(|&i| mu[i] != 0.0) {
        for j in (0..n).filter(|&j| j != i) {
            value += mu[i] * q.rate(i, j) * (v[j] - v[i]).exp();
        }
    }
    value
}

fn solve_spd(h: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = h.clone().cholesky() {
        return Some(ch.solve(rhs));
    }
    let ridge = 1e-12 * h.diagonal().amax().max(1e-300);
    let mut reg = h.clone();
    for i in 0..h.nrows() {
        reg[(i, i)] += ridge;
    }
    reg.cholesky().map(|ch| ch.solve(rhs))
}

/// Damped Newton on the convex inner objective from `v0` (`v0[0]` is ignored and set to 0).
fn minimize_inner(q: &QMatrix, mu: &[f64], mut v: Vec<f64>, tol: f64, max_iters: usize) -> Inner {
    v[0] = 0.0;
    let n = q.n();
    let mut iterations = 0;
    let (mut value, mut g, mut h) = inner_terms(q, mu, &v);
    let mut diverging = false;
    while g.amax() > tol && iterations < max_iters {
        iterations += 1;
        let Some(dir) = solve_spd(&h, &(-&g)) else {
            break;
        };
        let slope = g.dot(&dir);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = std::iter::once(0.0)
                .chain((1..n).map(|k| v[k] + step * dir[k - 1]))
                .collect();
            if trial.iter().any(|x| x.abs() > V_BOUND) {
                step *= 0.5;
                diverging = true;
                continue;
            }
            let (tv, tg, th) = inner_terms(q, mu, &trial);
            let armijo = tv <= value + 1e-4 * step * slope;
            // near the optimum the decrease is below rounding; accept on gradient progress
            let flat = tv <= value + 1e-14 * value.abs().max(1.0) && tg.amax() < g.amax();
            if tv.is_finite() && (armijo || flat) {
                v = trial;
                value = tv;
                g = tg;
                h = th;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        diverging = diverging && v.iter().any(|x| x.abs() > 0.5 * V_BOUND);
    }
    let grad_inf = g.amax();
    Inner {
        value: inner_value(q, mu, &v),
        v,
        grad_inf,
        iterations,
        converged: grad_inf <= tol,
        diverging,
    }
}

fn witness_from_log(v: &[f64]) -> Result<PositiveVector> {
    PositiveVector::new(v.iter().map(|x| (x - v[0]).exp()).collect())
}

/// Direct evaluation of `I(mu)` by minimizing the inner objective over `u > 0`.
///
/// For measures on the boundary of the simplex the infimum may not be
/// attained; the best value is then returned with `converged == false`.
pub fn rate_direct(q: &QMatrix, mu: &ProbabilityMeasure, opts: &RateOptions) -> Result<RateResult> {
    check_mu(q, mu)?;
    let n = q.n();
    let mut best: Option<Inner> = None;
    let mut iterations = 0;
    let starts = opts.starts.max(1);
    for s in 0..starts {
        let v0 = if s == 0 {
            vec![0.0; n]
        } else {
            let mut rng = replica_rng(opts.seed, s as u64);
            (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
        };
        let run = minimize_inner(q, mu.as_slice(), v0, opts.direct_tol, opts.max_iters);
        iterations += run.iterations;
        let better = match &best {
            None => true,
            Some(b) => {
                (run.converged && !b.converged) || (run.converged == b.converged && run.value < b.value)
            }
        };
        if better {
            best = Some(run);
        }
    }
    let best = best.expect("at least one start");
    Ok(RateResult {
        value: -best.value,
        route: Route::Direct,
        witness: witness_from_log(&best.v)?,
        converged: best.converged,
        diagnostics: RateDiagnostics {
            iterations,
            stationarity_residual: best.grad_inf,
            starts,
            diverging: best.diverging,
        },
    })
}

/// Residuals of `h(i) sum_j q_ij phi(j) = phi(i)^2 sum_j q_ji h(j) / phi(j)`.
pub fn tilt_balance_residuals(q: &QMatrix, h: &[f64], phi: &PositiveVector) -> Result<Vec<f64>> {
    let n = q.n();
    if h.len() != n || phi.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: if h.len() != n { h.len() } else { phi.len() },
        });
    }
    let qphi = q.apply(phi.as_slice())?;
    Ok((0..n)
        .map(|i| {
            let back: f64 = (0..n).map(|j| q.rate(j, i) * h[j] / phi[j]).sum();
            h[i] * qphi[i] - phi[i] * phi[i] * back
        })
        .collect())
}

/// Output of [`rate_balanced`] with its cross-checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalancedRate {
    pub result: RateResult,
    /// Tilting function with `phi[0] = 1`.
    pub phi: PositiveVector,
    /// `max_i` of [`tilt_balance_residuals`] with `h = n mu`.
    pub equation_residual: f64,
    /// Total variation between `mu` and the invariant law of `Q^phi`.
    pub invariant_tv: f64,
}

/// `I(mu)` for a full-support `mu` through the balancing substitution
/// `h = n mu`, `beta = sqrt(h)`, `phi = alpha beta`.
pub fn rate_balanced(q: &QMatrix, mu: &ProbabilityMeasure, opts: &RateOptions) -> Result<BalancedRate> {
    check_mu(q, mu)?;
    if let Some(index) = mu.zero_mass_state() {
        return Err(Error::MuNotFullSupport { index });
    }
    let n = q.n();
    let h: Vec<f64> = mu.as_slice().iter().map(|m| n as f64 * m).collect();
    let beta = PositiveVector::new(h.iter().map(|x| x.sqrt()).collect())?;
    let bal = balance(q, &beta, &opts.solve)?;
    let raw: Vec<f64> = (0..n).map(|i| bal.alpha[i] * beta[i]).collect();
    let phi = PositiveVector::new(raw.iter().map(|x| x / raw[0]).collect())?;

    let value = -inner_objective(q, mu, &phi)?;
    let equation_residual = tilt_balance_residuals(q, &h, &phi)?
        .iter()
        .fold(0.0_f64, |m, r| m.max(r.abs()));
    let nu = invariant_of_tilt(&tilt_generator(q, &phi)?)?;
    let invariant_tv = mu.total_variation(nu.as_slice());
    let converged = equation_residual <= 1e-9 && invariant_tv <= 1e-8;
    Ok(BalancedRate {
        result: RateResult {
            value,
            route: Route::Balanced,
            witness: phi.clone(),
            converged,
            diagnostics: RateDiagnostics {
                iterations: bal.report.iterations,
                stationarity_residual: bal.residual_inf,
                starts: bal.report.restarts_used + 1,
                diverging: false,
            },
        },
        phi,
        equation_residual,
        invariant_tv,
    })
}

/// `nu_V = l * r / <l, r>` for the Perron pair of `Q + diag V`, and `lambda`.
fn dual_terms(q: &QMatrix, v: &[f64]) -> Result<(f64, Vec<f64>)> {
    let mut m = q.matrix().clone();
    for i in 0..q.n() {
        m[(i, i)] += v[i];
    }
    let right = principal_eigenvalue(&m)?;
    let left = principal_eigenvalue(&m.transpose())?;
    let prod: Vec<f64> = right
        .vector
        .as_slice()
        .iter()
        .zip(left.vector.as_slice())
        .map(|(a, b)| a * b)
        .collect();
    let total: f64 = prod.iter().sum();
    Ok((right.lambda, prod.iter().map(|x| x / total).collect()))
}

/// Bound on the dual potential; leaving it signals a boundary measure.
const DUAL_BOUND: f64 = 200.0;

/// `I(mu)` as `sup_V <V, mu> - lambda_max(Q + diag V)` with `V_0 = 0`.
///
/// The ascent uses the exact gradient `mu - nu_V` and a Newton step whose
/// Hessian is a central difference of that gradient.
pub fn rate_legendre(q: &QMatrix, mu: &ProbabilityMeasure, opts: &RateOptions) -> Result<RateResult> {
    check_mu(q, mu)?;
    let n = q.n();
    let m = n - 1;
    let mu_s = mu.as_slice();
    let dual = |v: &[f64]| -> Result<(f64, DVector<f64>)> {
        let (lambda, nu) = dual_terms(q, v)?;
        let value = v.iter().zip(mu_s).map(|(a, b)| a * b).sum::<f64>() - lambda;
        Ok((value, DVector::from_iterator(m, (1..n).map(|k| mu_s[k] - nu[k]))))
    };

    let mut v = vec![0.0; n];
    let (mut value, mut g) = dual(&v)?;
    let mut iterations = 0;
    let mut diverging = false;
    let max_iters = opts.max_iters * 4;
    while g.amax() > opts.legendre_tol && iterations < max_iters {
        iterations += 1;
        // Hessian of the concave dual by central differences of the gradient
        let mut hess = DMatrix::zeros(m, m);
        for k in 0..m {
            let hstep = 1e-5 * (1.0 + v[k + 1].abs());
            let mut vp = v.clone();
            let mut vm = v.clone();
            vp[k + 1] += hstep;
            vm[k + 1] -= hstep;
            let gp = dual(&vp)?.1;
            let gm = dual(&vm)?.1;
            hess.set_column(k, &((gp - gm) / (2.0 * hstep)));
        }
        let neg_h = -(&hess + hess.transpose()) * 0.5;
        let dir = solve_spd(&neg_h, &g).unwrap_or_else(|| g.clone());
        let slope = g.dot(&dir);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = std::iter::once(0.0)
                .chain((1..n).map(|k| v[k] + step * dir[k - 1]))
                .collect();
            if trial.iter().any(|x| x.abs() > DUAL_BOUND) {
                diverging = true;
                step *= 0.5;
                continue;
            }
            let (tv, tg) = dual(&trial)?;
            let armijo = tv >= value + 1e-4 * step * slope;
            let flat = tv >= value - 1e-14 * value.abs().max(1.0) && tg.amax() < g.amax();
            if armijo || flat {
                v = trial;
                value = tv;
                g = tg;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        diverging = diverging && v.iter().any(|x| x.abs() > 0.5 * DUAL_BOUND);
    }
    let converged = g.amax() <= opts.legendre_tol;
    Ok(RateResult {
        value,
        route: Route::Legendre,
        witness: PositiveVector::new(v.iter().map(|x| x.exp()).collect())?,
        converged,
        diagnostics: RateDiagnostics {
            iterations,
            stationarity_residual: g.amax(),
            starts: 1,
            diverging: diverging && !converged,
        },
    })
}

/// `sup_mu { -I(mu) }` together with a maximizing measure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariationalRate {
    pub value: f64,
    /// Maximizer of `-I`, i.e. the minimizer of the rate function.
    pub argmin: ProbabilityMeasure,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_residual: f64,
}

fn softmax(theta: &[f64]) -> Vec<f64> {
    let mx = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = theta.iter().map(|t| (t - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Evaluates `-I(softmax theta)` and its gradient in `theta_1..`; the inner
/// minimizer `u*` enters through `dI/dmu_i = -(Qu*/u*)(i)`.
fn outer_terms(
    q: &QMatrix,
    theta: &[f64],
    warm: &[f64],
    opts: &RateOptions,
) -> (f64, DVector<f64>, Vec<f64>, bool) {
    let n = q.n();
    let mu = softmax(theta);
    let inner = minimize_inner(q, &mu, warm.to_vec(), opts.direct_tol, opts.max_iters);
    let u: Vec<f64> = inner.v.iter().map(|x| x.exp()).collect();
    let c: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| q.rate(i, j) * u[j]).sum::<f64>() / u[i])
        .collect();
    let mean: f64 = (0..n).map(|i| mu[i] * c[i]).sum();
    let grad = DVector::from_iterator(n - 1, (1..n).map(|j| mu[j] * (c[j] - mean)));
    (inner.value, grad, inner.v, inner.converged)
}

/// `sup_{mu in P(E)} inf_{u > 0} sum_i mu_i (Qu)(i)/u(i)`, the exponential
/// decay rate of the survival probability, by BFGS ascent over softmax
/// coordinates with `opts.outer_starts` deterministic starts.
pub fn survival_rate_variational(q: &QMatrix, opts: &RateOptions) -> Result<VariationalRate> {
    let n = q.n();
    let m = n - 1;
    let tol = 1e-9;
    let mut best: Option<VariationalRate> = None;
    let mut total_iters = 0;
    for s in 0..opts.outer_starts.max(1) {
        let mut theta = vec![0.0; n];
        if s > 0 {
            let mut rng = replica_rng(opts.seed ^ 0x5eed, s as u64);
            for t in theta.iter_mut().skip(1) {
                *t = rng.gen_range(-2.0..2.0);
            }
        }
        let (mut value, mut g, mut warm, mut inner_ok) = outer_terms(q, &theta, &vec![0.0; n], opts);
        // inverse Hessian approximation of the negated objective
        let mut hinv = DMatrix::<f64>::identity(m, m);
        let mut iters = 0;
        while g.amax() > tol && iters < opts.max_iters {
            iters += 1;
            let dir = &hinv * &g;
            let slope = g.dot(&dir);
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..50 {
                let trial: Vec<f64> = std::iter::once(0.0)
                    .chain((1..n).map(|k| theta[k] + step * dir[k - 1]))
                    .collect();
                let (tv, tg, tw, tok) = outer_terms(q, &trial, &warm, opts);
                let armijo = tv >= value + 1e-4 * step * slope;
                let flat = tv >= value - 1e-14 * value.abs().max(1.0) && tg.amax() < g.amax();
                if tv.is_finite() && (armijo || flat) {
                    accepted = Some((trial, tv, tg, tw, tok));
                    break;
                }
                step *= 0.5;
            }
            let Some((trial, tv, tg, tw, tok)) = accepted else {
                break;
            };
            let sv = DVector::from_iterator(m, (1..n).map(|k| trial[k] - theta[k]));
            // ascent: the negated gradient change is y for the minimization form
            let yv = &g - &tg;
            let sy = sv.dot(&yv);
            if sy > 1e-300 {
                let rho = 1.0 / sy;
                let eye = DMatrix::<f64>::identity(m, m);
                let left = &eye - &sv * yv.transpose() * rho;
                let right = &eye - &yv * sv.transpose() * rho;
                hinv = &left * &hinv * &right + &sv * sv.transpose() * rho;
            }
            theta = trial;
            value = tv;
            g = tg;
            warm = tw;
            inner_ok = tok;
        }
        total_iters += iters;
        let cand = VariationalRate {
            value,
            argmin: ProbabilityMeasure::from_weights(&softmax(&theta))?,
            converged: inner_ok && g.amax() <= tol,
            iterations: iters,
            gradient_residual: g.amax(),
        };
        let better = best.as_ref().is_none_or(|b| cand.value > b.value);
        if better {
            best = Some(cand);
        }
    }
    let mut best = best.expect("at least one start");
    best.iterations = total_iters;
    if !best.value.is_finite() {
        return Err(Error::NotConverged {
            what: "variational survival rate",
            iterations: total_iters,
            residual: best.gradient_residual,
        });
    }
    Ok(best)
}

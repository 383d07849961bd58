//! C ABI over `ldp-core`.
//!
//! Every fallible entry point returns an [`LdpStatus`]; on failure a message
//! describing the cause is available from [`ldp_last_error`] on the same
//! thread. Generators live behind the opaque [`LdpQMatrix`] handle. Vectors
//! are passed as `double` pointers of length `n`, the number of states of the
//! handle they are used with. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ldp_core::nlsolver::{balance, SolveOptions};
use ldp_core::rate::{rate_balanced, rate_direct, rate_legendre, survival_rate_variational, RateOptions};
use ldp_core::simulate::survival_probability_exact;
use ldp_core::{expm_apply, principal_eigenvalue, Error, PositiveVector, ProbabilityMeasure, QMatrix};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LdpStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument is out of range (state index, time, route).
    InvalidArgument = 2,
    /// Input data violates a structural requirement (generator, measure, positivity).
    Validation = 3,
    /// An iterative method stopped short of its tolerance. Outputs hold the best iterate.
    NotConverged = 4,
    /// Overflow or another numerical breakdown.
    Numerical = 5,
    /// An internal panic was caught.
    Panic = 6,
}

/// Route used by [`ldp_rate`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LdpRoute {
    Direct = 0,
    Balanced = 1,
    Legendre = 2,
}

/// Opaque handle to a validated generator.
pub struct LdpQMatrix {
    inner: QMatrix,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(LdpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            _ if e.is_convergence() => LdpStatus::NotConverged,
            Error::StateOutOfRange { .. } | Error::InvalidTime(_) | Error::InvalidArgument(_) => {
                LdpStatus::InvalidArgument
            }
            Error::Overflow(_) | Error::HorizonExceeded { .. } | Error::MalformedPath(_) => {
                LdpStatus::Numerical
            }
            _ => LdpStatus::Validation,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(LdpStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, translating errors and panics into a status and the thread's last error.
fn guard(f: impl FnOnce() -> Result<LdpStatus, Failure>) -> LdpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => {
            if status == LdpStatus::Ok {
                set_last_error("");
            }
            status
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            LdpStatus::Panic
        }
    }
}

unsafe fn handle<'a>(q: *const LdpQMatrix) -> Result<&'a QMatrix, Failure> {
    q.as_ref().map(|h| &h.inner).ok_or_else(|| null("q"))
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write(out: *mut f64, values: &[f64]) {
    if !out.is_null() {
        ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    }
}

unsafe fn write_scalar(out: *mut f64, value: f64, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = value;
    Ok(())
}

/// Message of the last failed call on this thread, or an empty string after a
/// successful one. The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn ldp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ldp_version() -> *const c_char {
    const V: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version contains NUL"),
    };
    V.as_ptr()
}

/// Validates an `n x n` row-major generator and stores a new handle in `*out`.
///
/// # Safety
/// `row_major` must point to `n * n` readable doubles and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn ldp_qmatrix_new(
    n: usize,
    row_major: *const f64,
    out: *mut *mut LdpQMatrix,
) -> LdpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let len = n
            .checked_mul(n)
            .ok_or_else(|| Failure(LdpStatus::InvalidArgument, format!("n = {n} is too large")))?;
        let raw = input(row_major, len, "row_major")?;
        let q = QMatrix::new(n, raw)?;
        *out = Box::into_raw(Box::new(LdpQMatrix { inner: q }));
        Ok(LdpStatus::Ok)
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `q` must come from [`ldp_qmatrix_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ldp_qmatrix_free(q: *mut LdpQMatrix) {
    if !q.is_null() {
        drop(Box::from_raw(q));
    }
}

/// Number of states, or 0 for a null handle.
///
/// # Safety
/// `q` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ldp_qmatrix_n(q: *const LdpQMatrix) -> usize {
    q.as_ref().map_or(0, |h| h.inner.n())
}

/// Writes the killing rates `-sum_j q_ij` into `out`.
///
/// # Safety
/// `q` must be a live handle and `out` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn ldp_qmatrix_killing(q: *const LdpQMatrix, out: *mut f64) -> LdpStatus {
    guard(|| {
        let q = handle(q)?;
        if out.is_null() {
            return Err(null("out"));
        }
        write(out, q.killing());
        Ok(LdpStatus::Ok)
    })
}

/// Principal eigenvalue of `Q` and, when `vector_out` is not null, its positive
/// right eigenvector normalized to first entry 1.
///
/// # Safety
/// `q` must be a live handle, `lambda_out` writable, and `vector_out` null or `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn ldp_principal_eigenvalue(
    q: *const LdpQMatrix,
    lambda_out: *mut f64,
    vector_out: *mut f64,
) -> LdpStatus {
    guard(|| {
        let q = handle(q)?;
        let pair = principal_eigenvalue(q.matrix())?;
        write_scalar(lambda_out, pair.lambda, "lambda_out")?;
        let v = pair.vector.as_slice();
        let scaled: Vec<f64> = v.iter().map(|x| x / v[0]).collect();
        write(vector_out, &scaled);
        Ok(LdpStatus::Ok)
    })
}

/// `out = exp(tQ) v`.
///
/// # Safety
/// `q` must be a live handle; `v` and `out` must each hold `n` doubles and may alias.
#[no_mangle]
pub unsafe extern "C" fn ldp_expm_apply(
    q: *const LdpQMatrix,
    t: f64,
    v: *const f64,
    out: *mut f64,
) -> LdpStatus {
    guard(|| {
        let q = handle(q)?;
        let v = input(v, q.n(), "v")?.to_vec();
        if out.is_null() {
            return Err(null("out"));
        }
        write(out, &expm_apply(q, t, &v)?);
        Ok(LdpStatus::Ok)
    })
}

/// Probability that the chain started in `state` is still alive at time `t`.
///
/// # Safety
/// `q` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ldp_survival_probability(
    q: *const LdpQMatrix,
    state: usize,
    t: f64,
    out: *mut f64,
) -> LdpStatus {
    guard(|| {
        let q = handle(q)?;
        let p = survival_probability_exact(q, state, t)?;
        write_scalar(out, p, "out")?;
        Ok(LdpStatus::Ok)
    })
}

/// Solves the balancing equations for weights `beta`, writing `alpha` (with
/// `alpha[0] = 1`) and, when not null, the max-norm residual.
///
/// # Safety
/// `q` must be a live handle, `beta` and `alpha_out` must hold `n` doubles,
/// `residual_out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn ldp_balance(
    q: *const LdpQMatrix,
    beta: *const f64,
    tol: f64,
    alpha_out: *mut f64,
    residual_out: *mut f64,
) -> LdpStatus {
    guard(|| {
        let q = handle(q)?;
        let beta = PositiveVector::new(input(beta, q.n(), "beta")?.to_vec())?;
        if alpha_out.is_null() {
            return Err(null("alpha_out"));
        }
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(Failure(
                LdpStatus::InvalidArgument,
                format!("tol must be positive, got {tol}"),
            ));
        }
        let opts = SolveOptions {
            tol,
            ..SolveOptions::default()
        };
        match balance(q, &beta, &opts) {
            Ok(b) => {
                write(alpha_out, b.alpha.as_slice());
                if !residual_out.is_null() {
                    *residual_out = b.residual_inf;
                }
                Ok(LdpStatus::Ok)
            }
            Err(Error::SolverNotConverged(report)) => {
                write(alpha_out, report.x.as_slice());
                if !residual_out.is_null() {
                    *residual_out = report.residual_inf;
                }
                Err(Failure(
                    LdpStatus::NotConverged,
                    Error::SolverNotConverged(report).to_string(),
                ))
            }
            Err(e) => Err(e.into()),
        }
    })
}

/// Rate function value at the probability vector `mu` by the chosen route.
/// When `witness_out` is not null it receives the route's optimizer (first
/// entry 1). An unconverged solve still writes its best value and returns
/// [`LdpStatus::NotConverged`].
///
/// # Safety
/// `q` must be a live handle, `mu` must hold `n` doubles, `value_out` must be
/// writable and `witness_out` null or `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn ldp_rate(
    q: *const LdpQMatrix,
    mu: *const f64,
    route: LdpRoute,
    value_out: *mut f64,
    witness_out: *mut f64,
) -> LdpStatus {
    guard(|| {
        let q = handle(q)?;
        let mu = ProbabilityMeasure::new(input(mu, q.n(), "mu")?.to_vec())?;
        if value_out.is_null() {
            return Err(null("value_out"));
        }
        let opts = RateOptions::default();
        let r = match route {
            LdpRoute::Direct => rate_direct(q, &mu, &opts)?,
            LdpRoute::Balanced => rate_balanced(q, &mu, &opts)?.result,
            LdpRoute::Legendre => rate_legendre(q, &mu, &opts)?,
        };
        *value_out = r.value;
        write(witness_out, r.witness.as_slice());
        if r.converged {
            Ok(LdpStatus::Ok)
        } else {
            Err(Failure(
                LdpStatus::NotConverged,
                format!(
                    "{} route stopped at stationarity residual {:e}",
                    r.route.name(),
                    r.diagnostics.stationarity_residual
                ),
            ))
        }
    })
}

/// Survival decay rate from the variational formula, with the minimizing
/// measure written to `argmin_out` when it is not null.
///
/// # Safety
/// `q` must be a live handle, `value_out` writable and `argmin_out` null or `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn ldp_survival_rate_variational(
    q: *const LdpQMatrix,
    value_out: *mut f64,
    argmin_out: *mut f64,
) -> LdpStatus {
    guard(|| {
        let q = handle(q)?;
        if value_out.is_null() {
            return Err(null("value_out"));
        }
        let v = survival_rate_variational(q, &RateOptions::default())?;
        *value_out = v.value;
        write(argmin_out, v.argmin.as_slice());
        if v.converged {
            Ok(LdpStatus::Ok)
        } else {
            Err(Failure(
                LdpStatus::NotConverged,
                format!(
                    "outer ascent stopped at gradient residual {:e}",
                    v.gradient_residual
                ),
            ))
        }
    })
}

//! Seeded random problem instances shared by the self-check and the tests.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::nlsolver::SystemCoefficients;
use crate::qcore::{PositiveVector, ProbabilityMeasure, QMatrix};
use crate::simulate::replica_rng;

/// RNG for instance `index` of a seeded family.
pub fn instance_rng(seed: u64, index: u64) -> ChaCha8Rng {
    replica_rng(seed ^ 0x1d5_ca5e, index)
}

/// The fixed three-state chain used throughout the examples and checks.
pub fn test_matrix() -> QMatrix {
    QMatrix::new(3, &[-2.0, 1.0, 0.5, 1.0, -3.0, 1.0, 0.5, 2.0, -3.0]).expect("valid test matrix")
}

/// Off-diagonal rates uniform in `rates`, killing rates uniform in `killing`.
pub fn random_q<R: Rng + ?Sized>(rng: &mut R, n: usize, rates: (f64, f64), killing: (f64, f64)) -> QMatrix {
    let mut flat = vec![0.0; n * n];
    for i in 0..n {
        let mut out = 0.0;
        for j in (0..n).filter(|&j| j != i) {
            let r = rng.gen_range(rates.0..rates.1);
            flat[i * n + j] = r;
            out += r;
        }
        let k = if killing.1 > killing.0 {
            rng.gen_range(killing.0..killing.1)
        } else {
            killing.0
        };
        flat[i * n + i] = -(out + k);
    }
    QMatrix::new(n, &flat).expect("generated matrix is valid")
}

/// Symmetric off-diagonal rates with random killing.
pub fn random_symmetric_q<R: Rng + ?Sized>(rng: &mut R, n: usize) -> QMatrix {
    let mut flat = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let r = rng.gen_range(0.2..3.0);
            flat[i * n + j] = r;
            flat[j * n + i] = r;
        }
    }
    for i in 0..n {
        let out: f64 = (0..n).filter(|&j| j != i).map(|j| flat[i * n + j]).sum();
        flat[i * n + i] = -(out + rng.gen_range(0.0..1.0));
    }
    QMatrix::new(n, &flat).expect("generated matrix is valid")
}

/// Entries of `a` and `b` uniform in `[lo, hi)`.
pub fn random_coefficients<R: Rng + ?Sized>(rng: &mut R, n: usize, lo: f64, hi: f64) -> SystemCoefficients {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(lo..hi));
    let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(lo..hi));
    SystemCoefficients::new(a, b).expect("positive coefficients")
}

/// Entries of `a` and `b` log-uniform in `[lo, hi)`.
pub fn random_coefficients_log<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    lo: f64,
    hi: f64,
) -> SystemCoefficients {
    let (l, h) = (lo.ln(), hi.ln());
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(l..h).exp());
    let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(l..h).exp());
    SystemCoefficients::new(a, b).expect("positive coefficients")
}

pub fn random_positive<R: Rng + ?Sized>(rng: &mut R, n: usize, lo: f64, hi: f64) -> PositiveVector {
    PositiveVector::new((0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("positive")
}

/// Full-support measure with weights uniform in `[0.05, 1)` before normalization.
pub fn random_interior_measure<R: Rng + ?Sized>(rng: &mut R, n: usize) -> ProbabilityMeasure {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    ProbabilityMeasure::from_weights(&w).expect("positive weights")
}

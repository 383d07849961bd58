use approx::assert_relative_eq;
use ldp_core::instances::{instance_rng, random_positive, random_q, test_matrix};
use ldp_core::qcore::{apply_generator, expm_apply_scaled, validate_q_matrix};
use ldp_core::{expm_apply, principal_eigenvalue, stationary_distribution, Error, QMatrix};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

#[test]
fn validation_examples() {
    let q = validate_q_matrix(2, &[-2.0, 1.0, 1.0, -2.0]).unwrap();
    assert_eq!(q.killing(), &[1.0, 1.0]);
    let q = validate_q_matrix(2, &[-1.0, 1.0, 1.0, -1.0]).unwrap();
    assert_eq!(q.killing(), &[0.0, 0.0]);
    assert!(q.is_conservative());
    assert!(matches!(
        validate_q_matrix(2, &[-1.0, 0.0, 1.0, -1.0]),
        Err(Error::OffDiagonalNotPositive { row: 0, col: 1 })
    ));
}

#[test]
fn single_violations_are_named() {
    for k in 0..200 {
        let mut rng = instance_rng(11, k);
        let n = rng.gen_range(2..7);
        let q = random_q(&mut rng, n, (0.1, 5.0), (0.0, 1.0));
        let mut raw = q.to_row_major();
        let i = rng.gen_range(0..n);
        let j = (i + rng.gen_range(1..n)) % n;
        match k % 3 {
            0 => {
                raw[i * n + i] = if k % 2 == 0 { 0.0 } else { 0.5 };
                assert!(matches!(
                    validate_q_matrix(n, &raw),
                    Err(Error::DiagonalNotNegative { index }) if index == i
                ));
            }
            1 => {
                raw[i * n + j] = if k % 2 == 0 { 0.0 } else { -0.1 };
                assert!(matches!(
                    validate_q_matrix(n, &raw),
                    Err(Error::OffDiagonalNotPositive { row, col }) if row == i && col == j
                ));
            }
            _ => {
                raw[i * n + j] += q.killing()[i] + 0.25;
                assert!(matches!(
                    validate_q_matrix(n, &raw),
                    Err(Error::RowSumPositive { row, .. }) if row == i
                ));
            }
        }
    }
}

#[test]
fn malformed_inputs() {
    assert!(matches!(
        validate_q_matrix(1, &[-1.0]),
        Err(Error::TooFewStates { .. })
    ));
    assert!(validate_q_matrix(2, &[-1.0, 1.0, 1.0]).is_err());
    assert!(matches!(
        validate_q_matrix(2, &[-1.0, f64::NAN, 1.0, -1.0]),
        Err(Error::NotFinite { .. })
    ));
    // subnormal rates do not count as positive
    assert!(validate_q_matrix(2, &[-1.0, 1e-310, 1.0, -1.0]).is_err());
}

#[test]
fn generator_action_examples() {
    let q = QMatrix::new(2, &[-2.0, 1.0, 1.0, -2.0]).unwrap();
    assert_eq!(apply_generator(&q, &[1.0, 1.0]).unwrap(), vec![-1.0, -1.0]);
    assert_eq!(apply_generator(&q, &[1.0, 2.0]).unwrap(), vec![0.0, -3.0]);
    assert!(matches!(
        apply_generator(&q, &[1.0]),
        Err(Error::DimensionMismatch { .. })
    ));
}

/// Truncated Taylor series, accurate when `t * |Q|` is modest.
fn taylor_oracle(q: &DMatrix<f64>, t: f64, v: &[f64]) -> Vec<f64> {
    let mut term = DVector::from_column_slice(v);
    let mut sum = term.clone();
    for k in 1..120 {
        term = q * term * (t / k as f64);
        sum += &term;
    }
    sum.iter().copied().collect()
}

#[test]
fn expm_matches_taylor_series() {
    for k in 0..40 {
        let mut rng = instance_rng(12, k);
        let n = rng.gen_range(2..7);
        let q = random_q(&mut rng, n, (0.1, 2.0), (0.0, 1.0));
        let v = random_positive(&mut rng, n, 0.1, 3.0);
        let t = rng.gen_range(0.01..1.5);
        let got = expm_apply(&q, t, v.as_slice()).unwrap();
        let want = taylor_oracle(q.matrix(), t, v.as_slice());
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn two_state_closed_form() {
    let (a, c) = (1.5, 0.3);
    let q = QMatrix::new(2, &[-a - c, a, a, -a - c]).unwrap();
    for t in [0.1, 1.0, 7.0] {
        let p = expm_apply(&q, t, &[1.0, 0.0]).unwrap();
        let decay = (-c * t).exp();
        let mix = (-2.0 * a * t).exp();
        assert_relative_eq!(p[0], 0.5 * decay * (1.0 + mix), max_relative = 1e-13);
        assert_relative_eq!(p[1], 0.5 * decay * (1.0 - mix), max_relative = 1e-12);
    }
}

#[test]
fn semigroup_and_time_zero() {
    let q = test_matrix();
    let v = [0.3, 1.0, 2.0];
    assert_eq!(expm_apply(&q, 0.0, &v).unwrap(), v.to_vec());
    let direct = expm_apply(&q, 3.5, &v).unwrap();
    let composed = expm_apply(&q, 1.25, &expm_apply(&q, 2.25, &v).unwrap()).unwrap();
    for (a, b) in direct.iter().zip(&composed) {
        assert!((a - b).abs() <= 1e-12);
    }
    assert!(matches!(expm_apply(&q, -1.0, &v), Err(Error::InvalidTime(_))));
}

#[test]
fn survival_decreases_in_time() {
    let q = test_matrix();
    let mut prev = vec![1.0; 3];
    for k in 1..=40 {
        let s = expm_apply(&q, 0.5 * k as f64, &[1.0; 3]).unwrap();
        for (a, b) in s.iter().zip(&prev) {
            assert!(a < b && *a > 0.0);
        }
        prev = s;
    }
}

#[test]
fn uniform_shift_scales_by_exponential() {
    let mut rng = instance_rng(13, 0);
    let q = random_q(&mut rng, 4, (0.2, 2.0), (0.0, 0.5));
    let shifted = q.with_uniform_killing(0.7).unwrap();
    let v = [1.0, 0.5, 2.0, 0.25];
    for t in [0.5, 3.0, 20.0] {
        let a = expm_apply(&shifted, t, &v).unwrap();
        let b = expm_apply(&q, t, &v).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(*x, (-0.7 * t).exp() * y, max_relative = 1e-11);
        }
    }
}

#[test]
fn long_horizons_keep_log_precision() {
    let q = test_matrix();
    let lambda = principal_eigenvalue(q.matrix()).unwrap().lambda;
    let s = expm_apply_scaled(&q, 5000.0, &[1.0; 3]).unwrap();
    for i in 0..3 {
        let rate = s.log_abs(i) / 5000.0;
        assert!((rate - lambda).abs() < 1e-3, "{rate} vs {lambda}");
    }
}

#[test]
fn perron_pair_against_schur() {
    for k in 0..30 {
        let mut rng = instance_rng(14, k);
        let n = rng.gen_range(2..8);
        let q = random_q(&mut rng, n, (0.1, 4.0), (0.0, 2.0));
        let pair = principal_eigenvalue(q.matrix()).unwrap();
        let top = q
            .matrix()
            .clone()
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((pair.lambda - top).abs() < 1e-10);
        let r = q.matrix() * DVector::from_column_slice(pair.vector.as_slice())
            - DVector::from_column_slice(pair.vector.as_slice()) * pair.lambda;
        assert!(r.amax() < 1e-10);
    }
}

#[test]
fn conservative_perron_and_stationary() {
    let q = QMatrix::new(3, &[-2.0, 1.0, 1.0, 1.0, -2.0, 1.0, 1.0, 1.0, -2.0]).unwrap();
    let pair = principal_eigenvalue(q.matrix()).unwrap();
    assert!(pair.lambda.abs() < 1e-14);
    let pi = stationary_distribution(&q).unwrap();
    for p in pi.as_slice() {
        assert_relative_eq!(*p, 1.0 / 3.0, max_relative = 1e-14);
    }
    assert!(stationary_distribution(&test_matrix()).is_err());
}

#[test]
fn stationary_solves_left_null_space() {
    for k in 0..30 {
        let mut rng = instance_rng(15, k);
        let n = rng.gen_range(2..8);
        let q = random_q(&mut rng, n, (0.05, 5.0), (0.0, 0.0));
        let pi = stationary_distribution(&q).unwrap();
        let left = q.matrix().transpose() * DVector::from_column_slice(pi.as_slice());
        assert!(left.amax() < 1e-13);
        assert!((pi.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }
}

use ldp_core::instances::{
    instance_rng, random_coefficients, random_coefficients_log, random_positive, random_q, random_symmetric_q,
};
use ldp_core::nlsolver::{
    balance, balance_residuals, jacobian, matrix_form_residual, objective, objective_gradient, residuals,
    solve_system, SolveOptions, SystemCoefficients,
};
use ldp_core::selfcheck::{balance_residual_oracle, system_residuals_oracle};
use ldp_core::{Error, PositiveVector, QMatrix};
use nalgebra::DMatrix;
use rand::Rng;

fn ones(n: usize) -> SystemCoefficients {
    SystemCoefficients::new(DMatrix::from_element(n, n, 1.0), DMatrix::from_element(n, n, 1.0)).unwrap()
}

fn pv(v: &[f64]) -> PositiveVector {
    PositiveVector::new(v.to_vec()).unwrap()
}

#[test]
fn residual_examples() {
    let c = ones(3);
    assert_eq!(residuals(&c, &pv(&[1.0, 1.0, 1.0])).unwrap(), vec![0.0; 3]);
    let f = residuals(&c, &pv(&[2.0, 1.0, 1.0])).unwrap();
    assert_eq!(f[0], 1.5);
    assert_eq!(f, system_residuals_oracle(&c, &[2.0, 1.0, 1.0]));
    let f2: f64 = f.iter().map(|x| x * x).sum();
    assert_eq!(objective(&c, &pv(&[2.0, 1.0, 1.0])).unwrap(), f2);
    assert!(matches!(
        residuals(&c, &pv(&[1.0, 1.0])),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn equal_coefficients_vanish_at_ones() {
    let mut rng = instance_rng(21, 0);
    for n in 3..8 {
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(0.1..10.0));
        let c = SystemCoefficients::new(a.clone(), a).unwrap();
        let x = PositiveVector::ones(n);
        assert!(residuals(&c, &x).unwrap().iter().all(|f| f.abs() < 1e-12));
        assert!(objective_gradient(&c, &x)
            .unwrap()
            .iter()
            .all(|g| g.abs() < 1e-10));
    }
}

#[test]
fn coefficient_validation() {
    let bad = DMatrix::from_element(3, 3, 1.0);
    let mut neg = bad.clone();
    neg[(1, 2)] = 0.0;
    assert!(SystemCoefficients::new(bad.clone(), neg).is_err());
    let two = DMatrix::from_element(2, 2, 1.0);
    assert!(SystemCoefficients::new(two.clone(), two).is_err());
    assert!(SystemCoefficients::from_row_major(3, &[1.0; 9], &[1.0; 8]).is_err());
}

#[test]
fn objective_recomputed_independently() {
    for k in 0..50 {
        let mut rng = instance_rng(22, k);
        let n = 3 + (k as usize) % 6;
        let c = random_coefficients(&mut rng, n, 0.1, 10.0);
        let x = random_positive(&mut rng, n, 0.2, 5.0);
        let f = system_residuals_oracle(&c, x.as_slice());
        let lib = residuals(&c, &x).unwrap();
        for (a, b) in f.iter().zip(&lib) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}

#[test]
fn jacobian_sign_pattern() {
    // d f_j / d x_k is negative exactly when j = k + 1, positive otherwise
    for k in 0..50 {
        let mut rng = instance_rng(23, k);
        let n = 3 + (k as usize) % 6;
        let c = random_coefficients(&mut rng, n, 0.1, 10.0);
        let x = random_positive(&mut rng, n, 0.2, 5.0);
        let jac = jacobian(&c, &x).unwrap();
        for j in 0..n {
            for col in 0..n {
                let entry = jac[(j, col)];
                if j == col + 1 {
                    assert!(entry < 0.0, "entry ({j}, {col}) = {entry}");
                } else {
                    assert!(entry > 0.0, "entry ({j}, {col}) = {entry}");
                }
                // finite-difference sign agrees
                let h = 1e-6 * x[col];
                let mut xp = x.as_slice().to_vec();
                let mut xm = xp.clone();
                xp[col] += h;
                xm[col] -= h;
                let fd =
                    (system_residuals_oracle(&c, &xp)[j] - system_residuals_oracle(&c, &xm)[j]) / (2.0 * h);
                assert!(fd.signum() == entry.signum());
                assert!((fd - entry).abs() <= 1e-6 * entry.abs().max(1.0));
            }
        }
    }
}

#[test]
fn hand_gradient_signs() {
    let c = ones(3);
    let x = [2.0, 1.0, 1.0];
    let g = objective_gradient(&c, &pv(&x)).unwrap();
    for i in 0..3 {
        let h = 1e-6;
        let mut xp = x;
        let mut xm = x;
        xp[i] += h;
        xm[i] -= h;
        let f = |v: &[f64]| system_residuals_oracle(&c, v).iter().map(|r| r * r).sum::<f64>();
        let fd = (f(&xp) - f(&xm)) / (2.0 * h);
        assert_eq!(fd.signum(), g[i].signum());
    }
}

#[test]
fn all_ones_system_solves() {
    let r = solve_system(&ones(3), &SolveOptions::default()).unwrap();
    assert!(r.converged && r.residual_inf <= 1e-10);
    assert_eq!(r.restarts_used, 0);
}

#[test]
fn random_systems_solve() {
    for k in 0..200 {
        let mut rng = instance_rng(24, k);
        let n = 3 + (k as usize) % 6;
        let c = random_coefficients(&mut rng, n, 0.1, 10.0);
        let r = solve_system(&c, &SolveOptions::default()).unwrap();
        let res = system_residuals_oracle(&c, r.x.as_slice());
        assert!(res.iter().all(|f| f.abs() <= 1e-9), "instance {k}: {res:?}");
        assert!(r.residual_inf <= 1e-10);
    }
}

#[test]
fn wide_dynamic_range_solves() {
    for k in 0..20 {
        let mut rng = instance_rng(25, k);
        let n = 3 + (k as usize) % 4;
        let c = random_coefficients_log(&mut rng, n, 1e-3, 1e3);
        let r = solve_system(&c, &SolveOptions::default()).unwrap();
        assert!(r.converged, "instance {k} residual {}", r.residual_inf);
        assert!(r.restarts_used <= 16);
    }
}

#[test]
fn solver_is_deterministic() {
    let mut rng = instance_rng(26, 0);
    let c = random_coefficients_log(&mut rng, 6, 1e-2, 1e2);
    let opts = SolveOptions {
        seed: 9,
        ..SolveOptions::default()
    };
    let a = solve_system(&c, &opts).unwrap();
    let b = solve_system(&c, &opts).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.x.as_slice(), b.x.as_slice());
}

#[test]
fn impossible_budget_reports_best_point() {
    let mut rng = instance_rng(27, 0);
    let c = random_coefficients(&mut rng, 5, 0.1, 10.0);
    let opts = SolveOptions {
        max_iters: 1,
        restarts: 0,
        tol: 1e-300,
        seed: 0,
    };
    match solve_system(&c, &opts) {
        Err(Error::SolverNotConverged(best)) => {
            assert!(!best.converged);
            assert!(best.residual_inf.is_finite());
        }
        other => panic!("expected non-convergence, got {other:?}"),
    }
}

#[test]
fn two_state_closed_form() {
    let q = QMatrix::new(2, &[-1.0, 1.0, 4.0, -4.0]).unwrap();
    let b = balance(&q, &PositiveVector::ones(2), &SolveOptions::default()).unwrap();
    assert_eq!(b.alpha.as_slice(), &[1.0, 2.0]);
    assert!(b.residual_inf < 1e-14);
}

#[test]
fn random_balancing() {
    for k in 0..100 {
        let mut rng = instance_rng(28, k);
        let n = 2 + (k as usize) % 5;
        let q = random_q(&mut rng, n, (0.2, 3.0), (0.0, 1.0));
        let beta = random_positive(&mut rng, n, 0.1, 10.0);
        let b = balance(&q, &beta, &SolveOptions::default()).unwrap();
        assert_eq!(b.alpha[0], 1.0);
        let oracle = balance_residual_oracle(&q, b.alpha.as_slice(), beta.as_slice());
        assert!(oracle <= 1e-9, "instance {k}: {oracle}");
        let mf = matrix_form_residual(&q, &b.alpha, &beta).unwrap();
        assert!(mf <= 1e-9);
        assert!((mf - b.residual_inf).abs() <= 1e-12);
        // ratio invariance
        for lambda in [0.1, 3.0, 40.0] {
            let scaled = b.alpha.scaled(lambda).unwrap();
            let r = balance_residuals(&q, &scaled, &beta).unwrap();
            assert!(r.iter().all(|x| x.abs() <= 1e-9));
        }
    }
}

#[test]
fn symmetric_generators_balance_with_constant_alpha() {
    for k in 0..20 {
        let mut rng = instance_rng(29, k);
        let n = 2 + (k as usize) % 5;
        let q = random_symmetric_q(&mut rng, n);
        let beta = random_positive(&mut rng, n, 0.1, 10.0);
        let r = balance_residuals(&q, &PositiveVector::ones(n), &beta).unwrap();
        assert!(r.iter().all(|x| x.abs() <= 1e-12));
        assert!(matrix_form_residual(&q, &PositiveVector::ones(n), &beta).unwrap() <= 1e-12);
        let b = balance(&q, &beta, &SolveOptions::default()).unwrap();
        assert!(b.residual_inf <= 1e-9);
    }
}

#[test]
fn perturbed_alpha_has_positive_residual() {
    let mut rng = instance_rng(30, 0);
    let q = random_q(&mut rng, 5, (0.2, 3.0), (0.0, 1.0));
    let beta = random_positive(&mut rng, 5, 0.1, 10.0);
    let b = balance(&q, &beta, &SolveOptions::default()).unwrap();
    let mut a = b.alpha.as_slice().to_vec();
    a[2] *= 1.1;
    assert!(matrix_form_residual(&q, &pv(&a), &beta).unwrap() > 1e-3);
}

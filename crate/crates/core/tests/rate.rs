use ldp_core::instances::{
    instance_rng, random_interior_measure, random_positive, random_q, random_symmetric_q, test_matrix,
};
use ldp_core::rate::{
    inner_objective, rate_balanced, rate_direct, rate_legendre, survival_rate_variational,
    tilt_balance_residuals, RateOptions, Route,
};
use ldp_core::{principal_eigenvalue, stationary_distribution, Error, ProbabilityMeasure, QMatrix};
use rand::Rng;

fn opts() -> RateOptions {
    RateOptions::default()
}

#[test]
fn conservative_stationary_rate_is_zero() {
    for k in 0..10 {
        let mut rng = instance_rng(41, k);
        let n = rng.gen_range(2..6);
        let q = random_q(&mut rng, n, (0.2, 3.0), (0.0, 0.0));
        let pi = stationary_distribution(&q).unwrap();
        let d = rate_direct(&q, &pi, &opts()).unwrap();
        assert!(d.value.abs() < 1e-12 && d.converged);
        assert!(d.witness.as_slice().iter().all(|u| (u - 1.0).abs() < 1e-6));
        let b = rate_balanced(&q, &pi, &opts()).unwrap();
        assert!(b.result.value.abs() < 1e-10);
        let l = rate_legendre(&q, &pi, &opts()).unwrap();
        assert!(l.value.abs() < 1e-10);
    }
}

#[test]
fn uniform_shift_adds_constant() {
    let q = test_matrix();
    let shifted = q.with_uniform_killing(0.8).unwrap();
    let mu = ProbabilityMeasure::new(vec![0.2, 0.3, 0.5]).unwrap();
    for route in [Route::Direct, Route::Balanced, Route::Legendre] {
        let f = |q: &QMatrix| match route {
            Route::Direct => rate_direct(q, &mu, &opts()).unwrap().value,
            Route::Balanced => rate_balanced(q, &mu, &opts()).unwrap().result.value,
            Route::Legendre => rate_legendre(q, &mu, &opts()).unwrap().value,
        };
        assert!((f(&shifted) - f(&q) - 0.8).abs() < 1e-9, "{}", route.name());
    }
}

#[test]
fn three_routes_agree_on_test_matrix() {
    let q = test_matrix();
    let mu = ProbabilityMeasure::uniform(3);
    let d = rate_direct(&q, &mu, &opts()).unwrap().value;
    let b = rate_balanced(&q, &mu, &opts()).unwrap().result.value;
    let l = rate_legendre(&q, &mu, &opts()).unwrap().value;
    assert!((d - b).abs() <= 1e-6 && (d - l).abs() <= 1e-6);
    assert!(d > 0.0);
}

#[test]
fn symmetric_uniform_rate_is_mean_killing() {
    let mut rng = instance_rng(42, 0);
    let q = random_symmetric_q(&mut rng, 4);
    let mu = ProbabilityMeasure::uniform(4);
    let mean_kill = q.killing().iter().sum::<f64>() / 4.0;
    let b = rate_balanced(&q, &mu, &opts()).unwrap();
    assert!((b.result.value - mean_kill).abs() < 1e-10);
    let phi = b.phi.as_slice();
    assert!(phi.iter().all(|p| (p - 1.0).abs() < 1e-8));
}

#[test]
fn tilt_balance_equation_holds() {
    // h(i) sum_j q_ij phi_j = phi_i^2 sum_j q_ji h_j / phi_j
    for k in 0..30 {
        let mut rng = instance_rng(43, k);
        let n = 3 + (k as usize) % 3;
        let q = random_q(&mut rng, n, (0.2, 3.0), (0.0, 1.0));
        let mu = random_interior_measure(&mut rng, n);
        let b = rate_balanced(&q, &mu, &opts()).unwrap();
        let h: Vec<f64> = mu.as_slice().iter().map(|m| n as f64 * m).collect();
        let r = tilt_balance_residuals(&q, &h, &b.phi).unwrap();
        assert!(r.iter().all(|x| x.abs() <= 1e-7), "{r:?}");
        assert!(b.invariant_tv <= 1e-8);
    }
}

#[test]
fn boundary_measures() {
    let q = test_matrix();
    let edge = ProbabilityMeasure::new(vec![0.5, 0.5, 0.0]).unwrap();
    assert!(matches!(
        rate_balanced(&q, &edge, &opts()),
        Err(Error::MuNotFullSupport { index: 2 })
    ));
    // the direct route still returns a value, possibly flagged unconverged
    let d = rate_direct(&q, &edge, &opts()).unwrap();
    assert!(d.value.is_finite() && d.value >= 0.0);
    let l = rate_legendre(&q, &edge, &opts()).unwrap();
    assert!(l.value <= d.value + 1e-6);
    assert!(matches!(
        rate_direct(&q, &ProbabilityMeasure::uniform(2), &opts()),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn vertex_rate_is_exit_rate() {
    // staying in state i costs its total exit rate -q_ii
    let q = test_matrix();
    for i in 0..3 {
        let mut p = vec![0.0; 3];
        p[i] = 1.0;
        let d = rate_direct(&q, &ProbabilityMeasure::new(p).unwrap(), &opts()).unwrap();
        assert!((d.value + q.rate(i, i)).abs() < 1e-6, "state {i}: {}", d.value);
    }
}

#[test]
fn inner_objective_scale_invariant() {
    for k in 0..50 {
        let mut rng = instance_rng(44, k);
        let n = rng.gen_range(2..7);
        let q = random_q(&mut rng, n, (0.2, 3.0), (0.0, 1.0));
        let mu = random_interior_measure(&mut rng, n);
        let u = random_positive(&mut rng, n, 0.1, 10.0);
        let g = inner_objective(&q, &mu, &u).unwrap();
        for lambda in [0.1, 5.0, 40.0] {
            let gs = inner_objective(&q, &mu, &u.scaled(lambda).unwrap()).unwrap();
            assert!((gs - g).abs() <= 1e-12);
        }
    }
}

#[test]
fn convexity_and_mixing() {
    for k in 0..20 {
        let mut rng = instance_rng(45, k);
        let n = 3 + (k as usize) % 3;
        let q = random_q(&mut rng, n, (0.2, 3.0), (0.0, 1.0));
        let a = random_interior_measure(&mut rng, n);
        let b = random_interior_measure(&mut rng, n);
        let ia = rate_direct(&q, &a, &opts()).unwrap().value;
        let ib = rate_direct(&q, &b, &opts()).unwrap().value;
        for lambda in [0.1, 0.5, 0.9] {
            let m = a.mix(&b, 1.0 - lambda).unwrap();
            let im = rate_direct(&q, &m, &opts()).unwrap().value;
            assert!(im <= lambda * ia + (1.0 - lambda) * ib + 1e-8);
        }
        let unif = ProbabilityMeasure::uniform(n);
        let iu = rate_direct(&q, &unif, &opts()).unwrap().value;
        for delta in [0.01, 0.1] {
            let im = rate_direct(&q, &a.mix(&unif, delta).unwrap(), &opts())
                .unwrap()
                .value;
            assert!(im <= (1.0 - delta) * ia + delta * iu + 1e-8);
        }
    }
}

#[test]
fn rate_is_continuous_towards_the_boundary() {
    let q = test_matrix();
    let edge = ProbabilityMeasure::new(vec![0.5, 0.5, 0.0]).unwrap();
    let at_edge = rate_direct(&q, &edge, &opts()).unwrap().value;
    let unif = ProbabilityMeasure::uniform(3);
    let mut prev_gap = f64::INFINITY;
    for delta in [0.1, 0.01, 0.001] {
        let v = rate_direct(&q, &edge.mix(&unif, delta).unwrap(), &opts())
            .unwrap()
            .value;
        let gap = (v - at_edge).abs();
        assert!(gap < prev_gap);
        prev_gap = gap;
    }
    assert!(prev_gap < 0.05);
}

#[test]
fn variational_rate_matches_eigenvalue() {
    for k in 0..10 {
        let mut rng = instance_rng(46, k);
        let n = rng.gen_range(2..6);
        let q = random_q(&mut rng, n, (0.3, 3.0), (0.0, 1.0));
        let lambda = principal_eigenvalue(q.matrix()).unwrap().lambda;
        let v = survival_rate_variational(&q, &opts()).unwrap();
        assert!(v.converged);
        assert!((v.value - lambda).abs() <= 1e-5);
        // the argmin carries zero rate penalty beyond the survival cost
        let at = rate_direct(&q, &v.argmin, &opts()).unwrap().value;
        assert!((at + lambda).abs() <= 1e-6);
    }
}

#[test]
fn rates_are_nonnegative() {
    for k in 0..20 {
        let mut rng = instance_rng(47, k);
        let n = rng.gen_range(2..6);
        let q = random_q(&mut rng, n, (0.2, 3.0), (0.0, 1.0));
        let mu = random_interior_measure(&mut rng, n);
        assert!(rate_direct(&q, &mu, &opts()).unwrap().value >= -1e-12);
        assert!(rate_legendre(&q, &mu, &opts()).unwrap().value >= -1e-12);
    }
}

use ldp_core::instances::{instance_rng, random_q, test_matrix};
use ldp_core::rate::{rate_balanced, RateOptions};
use ldp_core::simulate::{
    estimate_ldp_cell, estimate_survival, holding_time_statistics, occupation_measure, replica_rng,
    sample_path, survival_probability_exact, survival_rate_empirical, JumpSampler, Occupation, Sampling,
};
use ldp_core::{principal_eigenvalue, stationary_distribution, Error, ProbabilityMeasure, QMatrix};

#[test]
fn sampled_paths_are_well_formed() {
    let q = test_matrix();
    let sampler = JumpSampler::new(&q).unwrap();
    for r in 0..500 {
        let p = sampler
            .sample(r as usize % 3, 10.0, &mut replica_rng(51, r))
            .unwrap();
        assert_eq!(p.initial_state(), r as usize % 3);
        assert!(p.jump_times().windows(2).all(|w| w[0] < w[1]));
        assert!(p.states().windows(2).all(|w| w[0] != w[1]));
        if let Some(z) = p.lifetime() {
            assert!(z <= 10.0);
            assert!(!p.alive_at(z));
        }
        let total: f64 = p.sojourns().map(|s| s.end - s.start).sum();
        assert!((total - p.lifetime().unwrap_or(10.0)).abs() < 1e-9);
    }
}

#[test]
fn same_seed_same_path() {
    let q = test_matrix();
    let a = sample_path(&q, 0, 50.0, &mut replica_rng(52, 3)).unwrap();
    let b = sample_path(&q, 0, 50.0, &mut replica_rng(52, 3)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn occupation_measures_are_probabilities() {
    let q = QMatrix::new(3, &[-2.0, 1.0, 1.0, 1.0, -2.0, 1.0, 1.0, 1.0, -2.0]).unwrap();
    let p = sample_path(&q, 0, 5.0, &mut replica_rng(53, 0)).unwrap();
    match occupation_measure(&p, 5.0).unwrap() {
        Occupation::Alive(m) => assert!((m.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12),
        Occupation::Dead => panic!("conservative chains never die"),
    }
}

#[test]
fn survival_exact_values() {
    let cons = QMatrix::new(2, &[-1.0, 1.0, 2.0, -2.0]).unwrap();
    assert!((survival_probability_exact(&cons, 0, 10.0).unwrap() - 1.0).abs() < 1e-12);
    let uni = cons.with_uniform_killing(0.4).unwrap();
    for t in [1.0, 10.0, 100.0] {
        for p in survival_rate_empirical(&uni, 1, &[t]).unwrap() {
            assert!((p.rate + 0.4).abs() <= 1e-12);
        }
    }
    for p in survival_rate_empirical(&cons, 0, &[1.0, 5.0]).unwrap() {
        assert!(p.rate.abs() < 1e-12);
    }
    assert!(matches!(
        survival_rate_empirical(&cons, 5, &[1.0]),
        Err(Error::StateOutOfRange { .. })
    ));
    assert!(survival_rate_empirical(&cons, 0, &[2.0, 1.0]).is_err());
}

#[test]
fn survival_rate_approaches_eigenvalue() {
    let q = test_matrix();
    let lambda = principal_eigenvalue(q.matrix()).unwrap().lambda;
    let pts = survival_rate_empirical(&q, 0, &[10.0, 100.0, 1000.0]).unwrap();
    let gaps: Vec<f64> = pts.iter().map(|p| (p.rate - lambda).abs()).collect();
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2]);
    assert!(gaps[2] < 1e-3);
}

#[test]
fn monte_carlo_survival() {
    let q = test_matrix();
    let (p, se) = estimate_survival(&q, 0, 5.0, 200_000, 54).unwrap();
    let exact = survival_probability_exact(&q, 0, 5.0).unwrap();
    assert!((p - exact).abs() <= 4.0 * se, "{p} vs {exact} ({se})");
}

#[test]
fn sojourn_means() {
    let mut rng = instance_rng(55, 0);
    let q = random_q(&mut rng, 4, (0.3, 2.0), (0.05, 0.3));
    let stats = holding_time_statistics(&q, 0, 60.0, 20_000, 55).unwrap();
    for (i, (count, mean, se)) in stats.into_iter().enumerate() {
        assert!(count > 1000);
        let expected = 1.0 / -q.rate(i, i);
        assert!(
            (mean - expected).abs() <= 3.0 * se,
            "state {i}: {mean} vs {expected}"
        );
    }
}

#[test]
fn whole_simplex_ball_is_survival() {
    let q = test_matrix();
    let center = ProbabilityMeasure::uniform(3);
    let cell = estimate_ldp_cell(&q, 0, 3.0, &center, 2.0, 50_000, 56, &Sampling::Plain).unwrap();
    let (p, _) = estimate_survival(&q, 0, 3.0, 50_000, 56).unwrap();
    assert_eq!(cell.probability, p);
}

#[test]
fn conservative_ball_at_stationary_law() {
    let q = QMatrix::new(3, &[-3.0, 2.0, 1.0, 1.0, -2.0, 1.0, 2.0, 2.0, -4.0]).unwrap();
    let pi = stationary_distribution(&q).unwrap();
    let est = estimate_ldp_cell(&q, 0, 200.0, &pi, 0.1, 5_000, 57, &Sampling::Plain).unwrap();
    assert!(est.probability > 0.99, "{}", est.probability);
}

#[test]
fn tilted_and_plain_estimators_agree() {
    let q = test_matrix();
    let center = ProbabilityMeasure::new(vec![0.4, 0.25, 0.35]).unwrap();
    let phi = rate_balanced(&q, &center, &RateOptions::default()).unwrap().phi;
    let t = 4.0;
    let plain = estimate_ldp_cell(&q, 0, t, &center, 0.15, 200_000, 58, &Sampling::Plain).unwrap();
    let tilted = estimate_ldp_cell(&q, 0, t, &center, 0.15, 200_000, 59, &Sampling::Tilted(phi)).unwrap();
    assert!(plain.hits > 0 && tilted.hits > 0);
    let combined = (plain.std_error.powi(2) + tilted.std_error.powi(2)).sqrt();
    assert!(
        (plain.probability - tilted.probability).abs() <= 3.0 * combined,
        "{} vs {} ({combined})",
        plain.probability,
        tilted.probability
    );
    // importance sampling is the more precise of the two
    assert!(tilted.std_error < plain.std_error);
}

#[test]
fn zero_hits_report_a_bound() {
    let q = test_matrix();
    let far = ProbabilityMeasure::new(vec![0.0, 0.0, 1.0]).unwrap();
    let est = estimate_ldp_cell(&q, 0, 50.0, &far, 0.01, 1_000, 60, &Sampling::Plain).unwrap();
    assert_eq!(est.hits, 0);
    assert_eq!(est.upper_bound, Some(3.0 / 1_000.0));
    assert_eq!(est.minus_log_p_over_t(), None);
}

#[test]
fn estimates_are_reproducible() {
    let q = test_matrix();
    let c = ProbabilityMeasure::uniform(3);
    let a = estimate_ldp_cell(&q, 1, 2.0, &c, 0.3, 10_000, 61, &Sampling::Plain).unwrap();
    let b = estimate_ldp_cell(&q, 1, 2.0, &c, 0.3, 10_000, 61, &Sampling::Plain).unwrap();
    assert_eq!(a, b);
}

//! Trajectories of the killed chain, occupation measures, exact survival
//! probabilities, and Monte Carlo estimates of occupation-ball probabilities.
//!
//! Every replica `r` draws from its own ChaCha8 stream `(seed, r)`, so results
//! do not depend on the number of worker threads. Per-replica values are
//! collected in replica order and summed sequentially.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::qcore::{
    expm_apply, expm_apply_scaled, principal_eigenvalue, Generator, PositiveVector, ProbabilityMeasure,
    QMatrix,
};
use crate::tilt::{log_drift, log_weight_with_drift, tilt_generator};

/// A sampled trajectory: the jump skeleton up to the horizon, and the death
/// time if the chain was killed before it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathRecord {
    n_states: usize,
    jump_times: Vec<f64>,
    /// `states[0]` is the initial state, `states[k]` the state after jump `k`.
    states: Vec<usize>,
    lifetime: Option<f64>,
    horizon: f64,
}

/// One maximal interval spent in a single state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sojourn {
    pub state: usize,
    pub start: f64,
    pub end: f64,
    /// False when the interval was cut by the simulation horizon.
    pub complete: bool,
}

impl PathRecord {
    pub fn new(
        n_states: usize,
        jump_times: Vec<f64>,
        states: Vec<usize>,
        lifetime: Option<f64>,
        horizon: f64,
    ) -> Result<Self> {
        let bad = |m: &str| Err(Error::MalformedPath(m.to_string()));
        if states.len() != jump_times.len() + 1 {
            return bad("need exactly one more state than jump times");
        }
        if let Some(&s) = states.iter().find(|&&s| s >= n_states) {
            return Err(Error::StateOutOfRange {
                index: s,
                n: n_states,
            });
        }
        if !(horizon > 0.0) {
            return bad("horizon must be positive");
        }
        let mut prev = 0.0;
        for &t in &jump_times {
            if !(t > prev) {
                return bad("jump times must be positive and strictly increasing");
            }
            prev = t;
        }
        if states.windows(2).any(|w| w[0] == w[1]) {
            return bad("consecutive states must differ");
        }
        match lifetime {
            Some(z) if !(z > prev && z <= horizon) => {
                return bad("lifetime must exceed the last jump time and not exceed the horizon")
            }
            None if prev >= horizon => return bad("jump after the horizon"),
            _ => {}
        }
        Ok(Self {
            n_states,
            jump_times,
            states,
            lifetime,
            horizon,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn initial_state(&self) -> usize {
        self.states[0]
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    /// Death time `zeta`, `None` if alive through the horizon.
    pub fn lifetime(&self) -> Option<f64> {
        self.lifetime
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `t < zeta`.
    pub fn alive_at(&self, t: f64) -> bool {
        self.lifetime.is_none_or(|z| t < z)
    }

    /// State occupied at time `t` (the last one if `t` is past the recorded skeleton).
    pub fn state_at(&self, t: f64) -> usize {
        let k = self.jump_times.partition_point(|&s| s <= t);
        self.states[k]
    }

    /// All sojourns of the recorded skeleton.
    pub fn sojourns(&self) -> impl Iterator<Item = Sojourn> + '_ {
        let end_all = self.lifetime.unwrap_or(self.horizon);
        self.states.iter().enumerate().map(move |(k, &state)| {
            let start = if k == 0 { 0.0 } else { self.jump_times[k - 1] };
            let (end, complete) = match self.jump_times.get(k) {
                Some(&e) => (e, true),
                None => (end_all, self.lifetime.is_some()),
            };
            Sojourn {
                state,
                start,
                end,
                complete,
            }
        })
    }

    /// Sojourns clipped to `[0, t]`.
    pub fn sojourns_until(&self, t: f64) -> impl Iterator<Item = Sojourn> + '_ {
        self.sojourns()
            .take_while(move |s| s.start < t)
            .map(move |s| Sojourn {
                end: s.end.min(t),
                complete: s.complete && s.end <= t,
                ..s
            })
    }
}

/// Occupation measure of a path at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub enum Occupation {
    Alive(ProbabilityMeasure),
    Dead,
}

/// `L_t(A) = (1/t) int_0^t 1_A(X_s) ds`, or [`Occupation::Dead`] when `zeta <= t`.
pub fn occupation_measure(path: &PathRecord, t: f64) -> Result<Occupation> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidTime(t));
    }
    if !path.alive_at(t) {
        return Ok(Occupation::Dead);
    }
    if t > path.horizon {
        return Err(Error::HorizonExceeded {
            t,
            horizon: path.horizon,
        });
    }
    let w = occupation_weights(path, t);
    ProbabilityMeasure::new(w).map(Occupation::Alive)
}

fn occupation_weights(path: &PathRecord, t: f64) -> Vec<f64> {
    let mut w = vec![0.0; path.n_states];
    for s in path.sojourns_until(t) {
        w[s.state] += (s.end - s.start) / t;
    }
    w
}

/// Jump-chain sampler for a generator whose rows sum to at most zero.
///
/// In state `i` the holding time is Exponential(`-g_ii`); the chain then jumps
/// to `j` with probability `g_ij / -g_ii`, or dies with the remaining
/// probability `k_i / -g_ii`, in one categorical draw.
#[derive(Debug, Clone)]
pub struct JumpSampler {
    exit_rate: Vec<f64>,
    /// Per state, cumulative probabilities of `(target, p)`; death is `None`.
    table: Vec<Vec<(Option<usize>, f64)>>,
}

impl JumpSampler {
    pub fn new<G: Generator + ?Sized>(g: &G) -> Result<Self> {
        let m = g.generator();
        let n = m.nrows();
        let mut exit_rate = Vec::with_capacity(n);
        let mut table = Vec::with_capacity(n);
        for i in 0..n {
            let exit = -m[(i, i)];
            if !(exit > 0.0 && exit.is_finite()) {
                return Err(Error::DiagonalNotNegative { index: i });
            }
            let mut cum = 0.0;
            let mut row = Vec::with_capacity(n);
            for j in (0..n).filter(|&j| j != i) {
                if m[(i, j)] < 0.0 {
                    return Err(Error::OffDiagonalNotPositive { row: i, col: j });
                }
                cum += m[(i, j)] / exit;
                row.push((Some(j), cum));
            }
            // rounding residue of a conservative row is not killing
            if cum < 1.0 - 1e-12 {
                row.push((None, 1.0));
            }
            exit_rate.push(exit);
            table.push(row);
        }
        Ok(Self { exit_rate, table })
    }

    pub fn n_states(&self) -> usize {
        self.exit_rate.len()
    }

    /// Samples a path started at `i0` up to `t_max`.
    pub fn sample<R: Rng + ?Sized>(&self, i0: usize, t_max: f64, rng: &mut R) -> Result<PathRecord> {
        let n = self.n_states();
        if i0 >= n {
            return Err(Error::StateOutOfRange { index: i0, n });
        }
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(Error::InvalidTime(t_max));
        }
        let mut jump_times = Vec::new();
        let mut states = vec![i0];
        let mut lifetime = None;
        let mut state = i0;
        let mut now = 0.0;
        loop {
            let hold: f64 = rng.sample::<f64, _>(Exp1) / self.exit_rate[state];
            let next_time = now + hold;
            if next_time >= t_max {
                break;
            }
            let u: f64 = rng.gen();
            let row = &self.table[state];
            let k = row.partition_point(|&(_, c)| c <= u).min(row.len() - 1);
            match row[k].0 {
                Some(j) => {
                    jump_times.push(next_time);
                    states.push(j);
                    state = j;
                    now = next_time;
                }
                None => {
                    lifetime = Some(next_time);
                    break;
                }
            }
        }
        Ok(PathRecord {
            n_states: n,
            jump_times,
            states,
            lifetime,
            horizon: t_max,
        })
    }
}

/// Deterministic RNG stream for replica `replica` under `seed`.
pub fn replica_rng(seed: u64, replica: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica);
    rng
}

/// Samples one path of `q` from `i0` up to `t_max`.
pub fn sample_path<R: Rng + ?Sized>(q: &QMatrix, i0: usize, t_max: f64, rng: &mut R) -> Result<PathRecord> {
    JumpSampler::new(q)?.sample(i0, t_max, rng)
}

/// `P_i(t < zeta) = (e^{tQ} 1)(i)`.
pub fn survival_probability_exact(q: &QMatrix, i: usize, t: f64) -> Result<f64> {
    if i >= q.n() {
        return Err(Error::StateOutOfRange { index: i, n: q.n() });
    }
    Ok(expm_apply(q, t, &vec![1.0; q.n()])?[i])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurvivalRatePoint {
    pub t: f64,
    /// `(1/t) log P_i(t < zeta)`.
    pub rate: f64,
    /// Set when the exact computation was out of range and the Perron root was used instead.
    pub asymptotic: bool,
}

/// `(1/t) log P_i(t < zeta)` on a grid, from the log-scaled exact semigroup.
pub fn survival_rate_empirical(q: &QMatrix, i: usize, t_grid: &[f64]) -> Result<Vec<SurvivalRatePoint>> {
    if i >= q.n() {
        return Err(Error::StateOutOfRange { index: i, n: q.n() });
    }
    let mut prev = 0.0;
    for &t in t_grid {
        if !(t > prev && t.is_finite()) {
            return Err(Error::InvalidArgument(
                "time grid must be positive and strictly increasing".into(),
            ));
        }
        prev = t;
    }
    let ones = vec![1.0; q.n()];
    let mut out = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        match expm_apply_scaled(q, t, &ones) {
            Ok(s) => out.push(SurvivalRatePoint {
                t,
                rate: s.log_abs(i) / t,
                asymptotic: false,
            }),
            Err(Error::Overflow(_)) => out.push(SurvivalRatePoint {
                t,
                rate: principal_eigenvalue(q.matrix())?.lambda,
                asymptotic: true,
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// How paths are drawn for [`estimate_ldp_cell`].
#[derive(Debug, Clone, PartialEq)]
pub enum Sampling {
    /// Paths of the killed chain itself.
    Plain,
    /// Paths of the tilted chain `Q^phi`, reweighted by `1 / L^phi_t`.
    Tilted(PositiveVector),
}

/// Monte Carlo estimate of `P_i(L_t in B_TV(center, eps), t < zeta)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LdpEstimate {
    pub probability: f64,
    /// Binomial `sqrt(p(1-p)/N)` for plain sampling, sample standard error of
    /// the weighted indicator for tilted sampling.
    pub std_error: f64,
    pub n_samples: usize,
    pub hits: usize,
    pub t: f64,
    pub center: Vec<f64>,
    pub eps: f64,
    pub tilted: bool,
    /// Rule-of-three bound reported instead of a point estimate when nothing hit.
    pub upper_bound: Option<f64>,
}

impl LdpEstimate {
    /// `-(1/t) log p`, undefined for zero-hit cells.
    pub fn minus_log_p_over_t(&self) -> Option<f64> {
        (self.hits > 0 && self.probability > 0.0).then(|| -self.probability.ln() / self.t)
    }
}

/// Estimates the probability that the chain started at `i` survives to `t`
/// with occupation measure in the open total-variation ball `B(center, eps)`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_ldp_cell(
    q: &QMatrix,
    i: usize,
    t: f64,
    center: &ProbabilityMeasure,
    eps: f64,
    n_samples: usize,
    seed: u64,
    sampling: &Sampling,
) -> Result<LdpEstimate> {
    let n = q.n();
    if i >= n {
        return Err(Error::StateOutOfRange { index: i, n });
    }
    if center.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: center.len(),
        });
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidTime(t));
    }

    let hit = |path: &PathRecord| -> bool {
        path.alive_at(t) && center.total_variation(&occupation_weights(path, t)) < eps
    };

    let (values, tilted) = match sampling {
        Sampling::Plain => {
            let sampler = JumpSampler::new(q)?;
            let v = (0..n_samples as u64)
                .into_par_iter()
                .map(|r| {
                    let path = sampler.sample(i, t, &mut replica_rng(seed, r))?;
                    Ok(if hit(&path) { 1.0 } else { 0.0 })
                })
                .collect::<Result<Vec<f64>>>()?;
            (v, false)
        }
        Sampling::Tilted(phi) => {
            let tilted = tilt_generator(q, phi)?;
            let sampler = JumpSampler::new(&tilted)?;
            let drift = log_drift(q, phi)?;
            let v = (0..n_samples as u64)
                .into_par_iter()
                .map(|r| {
                    let path = sampler.sample(i, t, &mut replica_rng(seed, r))?;
                    if !hit(&path) {
                        return Ok(0.0);
                    }
                    let log_l =
                        log_weight_with_drift(phi, &drift, &path, t)?.expect("tilted chain is conservative");
                    Ok((-log_l).exp())
                })
                .collect::<Result<Vec<f64>>>()?;
            (v, true)
        }
    };

    let hits = values.iter().filter(|&&v| v > 0.0).count();
    let nf = n_samples as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let std_error = if tilted {
        let var = if n_samples > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0)
        } else {
            0.0
        };
        (var / nf).sqrt()
    } else {
        (mean * (1.0 - mean) / nf).sqrt()
    };
    Ok(LdpEstimate {
        probability: mean,
        std_error,
        n_samples,
        hits,
        t,
        center: center.as_slice().to_vec(),
        eps,
        tilted,
        upper_bound: (hits == 0).then_some(3.0 / nf),
    })
}

/// Plain Monte Carlo estimate of `P_i(t < zeta)` with its binomial standard error.
pub fn estimate_survival(q: &QMatrix, i: usize, t: f64, n_samples: usize, seed: u64) -> Result<(f64, f64)> {
    let est = estimate_ldp_cell(
        q,
        i,
        t,
        &ProbabilityMeasure::uniform(q.n()),
        2.0,
        n_samples,
        seed,
        &Sampling::Plain,
    )?;
    Ok((est.probability, est.std_error))
}

/// Per-state count, mean and standard error of holding times over `n_paths`
/// paths of length `t_max` started at `i0`.
///
/// Only sojourns starting before `t_max / 2` enter, with a sojourn still
/// running at `t_max` counted at its censored length; dropping censored
/// sojourns instead would bias the mean towards short stays. The remaining
/// bias is below `exp(q_ii t_max / 2)` relative.
pub fn holding_time_statistics(
    q: &QMatrix,
    i0: usize,
    t_max: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<(usize, f64, f64)>> {
    let sampler = JumpSampler::new(q)?;
    let n = q.n();
    let paths = (0..n_paths as u64)
        .into_par_iter()
        .map(|r| sampler.sample(i0, t_max, &mut replica_rng(seed, r)))
        .collect::<Result<Vec<_>>>()?;
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    let mut count = vec![0usize; n];
    for p in &paths {
        for s in p.sojourns().filter(|s| s.start < 0.5 * t_max) {
            let d = s.end - s.start;
            sum[s.state] += d;
            sum_sq[s.state] += d * d;
            count[s.state] += 1;
        }
    }
    Ok((0..n)
        .map(|i| {
            let c = count[i] as f64;
            let mean = sum[i] / c;
            let var = (sum_sq[i] / c - mean * mean) * c / (c - 1.0);
            (count[i], mean, (var / c).sqrt())
        })
        .collect())
}

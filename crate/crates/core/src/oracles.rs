//! Exact reference values used to check the filters: the Kalman marginal
//! likelihood, HMM enumeration, the negative-binomial series behind the
//! rejection-control estimator, and closed-form expectations for the
//! two-coin dynamic-threshold example.

use thiserror::Error;

use crate::logspace::{ln_weight, log_sum_exp};
use crate::models::{normal_log_density, DiscreteHmm, LgssParams, ModelError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("variance `{name}` = {value} must be positive")]
    NonPositiveVariance { name: &'static str, value: f64 },
    #[error("probability {0} outside (0, 1]")]
    InvalidProbability(f64),
    #[error("particle count must be at least 1")]
    InvalidCount,
    #[error("tolerance {0} must be positive")]
    InvalidTolerance(f64),
    #[error("series did not converge within {0} terms")]
    ConvergenceFailure(u64),
    #[error("{0} paths exceed the enumeration limit")]
    TooManyPaths(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Largest number of explicit paths [`path_sum_likelihood`] will visit.
pub const MAX_ENUMERATED_PATHS: f64 = 1e6;

/// Kalman predictive state for one observation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState {
    pub predictive_mean: f64,
    pub predictive_variance: f64,
    /// `log p(y_{1:t})`
    pub log_likelihood: f64,
}

/// Kalman filter over a clean linear-Gaussian model. Outlier fields of the
/// parameters are ignored.
pub fn kalman_filter(params: &LgssParams, observations: &[f64]) -> Result<Vec<KalmanState>, OracleError> {
    for (name, value) in [("q", params.q), ("r", params.r), ("v0", params.v0)] {
        if !(value.is_finite() && value > 0.0) {
            return Err(OracleError::NonPositiveVariance { name, value });
        }
    }
    let mut mean = params.m0;
    let mut var = params.v0;
    let mut log_likelihood = 0.0;
    let mut states = Vec::with_capacity(observations.len());
    for &y in observations {
        mean *= params.a;
        var = params.a * params.a * var + params.q;
        let s = var + params.r;
        log_likelihood += normal_log_density(y, mean, s);
        states.push(KalmanState {
            predictive_mean: mean,
            predictive_variance: s,
            log_likelihood,
        });
        let gain = var / s;
        mean += gain * (y - mean);
        var *= 1.0 - gain;
    }
    Ok(states)
}

/// Exact `log p(y_{1:T})` for the linear-Gaussian model.
pub fn kalman_loglik(params: &LgssParams, observations: &[f64]) -> Result<f64, OracleError> {
    Ok(kalman_filter(params, observations)?
        .last()
        .map_or(0.0, |s| s.log_likelihood))
}

/// Exact `log p(y_{1:T})` for a discrete HMM by the forward recursion in the
/// log domain. Symbols outside the alphabet have zero probability.
pub fn enumeration_loglik(hmm: &DiscreteHmm, observations: &[usize]) -> Result<f64, OracleError> {
    hmm.validate()?;
    let k = hmm.num_states();
    let log_trans: Vec<Vec<f64>> = hmm
        .transition
        .iter()
        .map(|row| row.iter().map(|&p| ln_weight(p)).collect())
        .collect();
    let log_emit = |state: usize, symbol: usize| {
        hmm.emission[state]
            .get(symbol)
            .map_or(f64::NEG_INFINITY, |&p| ln_weight(p))
    };
    // alpha over x_0 carries no observation.
    let mut alpha: Vec<f64> = hmm.initial.iter().map(|&p| ln_weight(p)).collect();
    let mut terms = vec![0.0; k];
    for &y in observations {
        let next: Vec<f64> = (0..k)
            .map(|j| {
                for i in 0..k {
                    terms[i] = alpha[i] + log_trans[i][j];
                }
                log_sum_exp(&terms) + log_emit(j, y)
            })
            .collect();
        alpha = next;
    }
    Ok(log_sum_exp(&alpha))
}

/// `p(y_{1:T})` by explicitly summing over all `K^{T+1}` state paths.
pub fn path_sum_likelihood(hmm: &DiscreteHmm, observations: &[usize]) -> Result<f64, OracleError> {
    hmm.validate()?;
    let k = hmm.num_states();
    let paths = (k as f64).powi(observations.len() as i32 + 1);
    if paths > MAX_ENUMERATED_PATHS {
        return Err(OracleError::TooManyPaths(paths));
    }
    let emit = |s: usize, y: usize| hmm.emission[s].get(y).copied().unwrap_or(0.0);
    let mut path = vec![0usize; observations.len() + 1];
    let mut total = 0.0;
    loop {
        let mut p = hmm.initial[path[0]];
        for (t, &y) in observations.iter().enumerate() {
            p *= hmm.transition[path[t]][path[t + 1]] * emit(path[t + 1], y);
        }
        total += p;
        // Odometer increment over the path digits.
        let mut pos = 0;
        loop {
            if pos == path.len() {
                return Ok(total);
            }
            path[pos] += 1;
            if path[pos] < k {
                break;
            }
            path[pos] = 0;
            pos += 1;
        }
    }
}

const SERIES_TERM_CAP: u64 = 1_000_000_000;

/// `Σ_{D=N+1}^∞ 1/(D−1) · C(D−1, N) · p^{N+1} (1−p)^{D−N−1}`, truncated once
/// a geometric bound on the remaining tail drops below `tolerance`.
///
/// Mathematically equal to `p / N`; this evaluates the series directly.
pub fn negbin_series(n: u64, p: f64, tolerance: f64) -> Result<f64, OracleError> {
    if n == 0 {
        return Err(OracleError::InvalidCount);
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(OracleError::InvalidProbability(p));
    }
    if !(tolerance > 0.0) {
        return Err(OracleError::InvalidTolerance(tolerance));
    }
    let nf = n as f64;
    let log_q = (1.0 - p).ln();
    // log of the negative-binomial pmf at D, starting from D = N + 1.
    let mut log_pmf = (nf + 1.0) * p.ln();
    let mut sum = 0.0;
    let mut d = n + 1;
    loop {
        let df = d as f64;
        let term = (log_pmf - (df - 1.0).ln()).exp();
        sum += term;
        // term(D+1) / term(D) = (D−1)(1−p) / (D−N), nonincreasing in D.
        let ratio = (df - 1.0) * (1.0 - p) / (df - nf);
        if ratio < 1.0 && term * ratio / (1.0 - ratio) < tolerance {
            return Ok(sum);
        }
        if d - n > SERIES_TERM_CAP {
            return Err(OracleError::ConvergenceFailure(SERIES_TERM_CAP));
        }
        log_pmf += df.ln() - (df - nf).ln() + log_q;
        d += 1;
    }
}

/// Expected estimator values for the single-particle two-coin example with a
/// per-sweep median threshold, conditioned on the four equally likely
/// first-pass configurations (particle weight, additional-particle weight):
/// (0.8, 0.8), (0.5, 0.5), (0.8, 0.5), (0.5, 0.8).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoinExpectations {
    pub case1: f64,
    pub case2: f64,
    pub case3: f64,
    pub case4: f64,
    pub total: f64,
}

const HIGH: f64 = 0.8;
const LOW: f64 = 0.5;
const MEDIAN: f64 = 0.65;

/// Acceptance probability of the fair-coin candidate under the median
/// threshold, and of a restarted (fresh uniform) candidate.
fn coin_acceptance_probabilities() -> (f64, f64) {
    let p_fair = LOW / MEDIAN;
    let p_restart = 0.5 + 0.5 * p_fair;
    (p_fair, p_restart)
}

/// Closed forms for the two-coin dynamic-threshold expectations.
pub fn coin_exact_expectation() -> CoinExpectations {
    let (p_f, p_a) = coin_acceptance_probabilities();
    let tail = (p_a - p_a.ln() - 1.0) / (1.0 - p_a).powi(2);
    let case1 = HIGH;
    let case2 = LOW;
    let case3 = HIGH * (p_f + (1.0 - p_f) * p_a * tail);
    let case4 = MEDIAN * (p_f + (1.0 - p_f) * tail);
    CoinExpectations {
        case1,
        case2,
        case3,
        case4,
        total: 0.25 * (case1 + case2 + case3 + case4),
    }
}

/// The same expectations by truncated direct summation over the number of
/// propagations `P`, independent of the closed forms.
pub fn coin_series_expectation(tolerance: f64) -> Result<CoinExpectations, OracleError> {
    if !(tolerance > 0.0) {
        return Err(OracleError::InvalidTolerance(tolerance));
    }
    let (p_f, p_a) = coin_acceptance_probabilities();
    let mut case3_tail = 0.0;
    let mut case4_tail = 0.0;
    let mut reject_run = 1.0; // (1 − p_A)^{P−3}
    let mut big_p = 3u64;
    loop {
        let inv = 1.0 / (big_p - 1) as f64;
        // Case 3: the particle (0.8) is accepted; the additional particle is
        // restarted until acceptance.
        case3_tail += HIGH * inv * reject_run * p_a;
        // Case 4: the particle (0.5) was rejected and is restarted; it ends
        // as a biased coin (0.8) or an accepted fair coin lifted to 0.65.
        case4_tail += HIGH * inv * reject_run * 0.5 + MEDIAN * inv * reject_run * 0.5 * (LOW / MEDIAN);
        reject_run *= 1.0 - p_a;
        if reject_run < tolerance {
            break;
        }
        big_p += 1;
        if big_p > SERIES_TERM_CAP {
            return Err(OracleError::ConvergenceFailure(SERIES_TERM_CAP));
        }
    }
    let case1 = HIGH;
    let case2 = LOW;
    let case3 = p_f * HIGH + (1.0 - p_f) * case3_tail;
    let case4 = p_f * MEDIAN + (1.0 - p_f) * case4_tail;
    Ok(CoinExpectations {
        case1,
        case2,
        case3,
        case4,
        total: 0.25 * (case1 + case2 + case3 + case4),
    })
}

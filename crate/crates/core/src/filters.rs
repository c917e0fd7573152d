//! Bootstrap particle filter, particle filter with rejection control, and the
//! alive particle filter.
//!
//! All three return a [`SweepResult`] holding `log Ẑ`. For the rejection
//! control filters the per-step factor is `Σ_n w_t^(n) / (P_t − 1)`, where
//! `P_t` counts every propagation at step `t` including rejected candidates
//! and those of the additional `(N+1)`-th particle, whose state and weight
//! are otherwise discarded.

use thiserror::Error;

use crate::logspace::log_sum_exp;
use crate::ssm::{
    CategoricalSampler, Particle, ParticleSet, RandomStream, SsmError, StateSpaceModel,
};
use crate::thresholds::{log_threshold_for_step, ScheduleError, Threshold, ThresholdSchedule};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("invalid threshold {0}")]
    InvalidThreshold(f64),
    #[error("invalid candidate weight {0}")]
    InvalidWeight(f64),
    #[error("particle count must be at least 1")]
    InvalidParticleCount,
    #[error("observation sequence is empty")]
    NoObservations,
    #[error("propagation count {0} must be at least 2")]
    InvalidCount(u64),
    #[error("propagation budget {budget} must exceed N + 1 = {required}")]
    InvalidBudget { budget: u64, required: u64 },
    #[error("step {t}: rejection loop exceeded {budget} propagations")]
    PropagationBudgetExceeded { t: usize, budget: u64 },
    #[error("step {t}: observation density returned {value}")]
    InvalidDensity { t: usize, value: f64 },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Model(#[from] SsmError),
}

/// Output of one filter run.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult<S> {
    /// `log Ẑ`; `-inf` if the sweep collapsed.
    pub log_z: f64,
    /// `log Σ_n w_t^(n)` for each completed step.
    pub log_weight_sums: Vec<f64>,
    /// `P_t` per step. `None` for the bootstrap filter.
    pub propagations: Option<Vec<u64>>,
    /// Thresholds in force at each step (rejection control only).
    pub thresholds: Vec<Threshold>,
    pub final_particles: ParticleSet<S>,
    pub total_propagations: u64,
    /// Step at which every weight vanished, if any.
    pub collapsed_at: Option<usize>,
    /// Set when the thresholds were computed from the sweep itself, which
    /// makes `Ẑ` a biased estimate.
    pub biased: bool,
}

impl<S> SweepResult<S> {
    pub fn z(&self) -> f64 {
        self.log_z.exp()
    }

    pub fn weight_sums(&self) -> Vec<f64> {
        self.log_weight_sums.iter().map(|v| v.exp()).collect()
    }

    pub fn is_collapsed(&self) -> bool {
        self.collapsed_at.is_some()
    }
}

/// Outcome of the acceptance test for one candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptDecision {
    pub accepted: bool,
    /// `ln max(w, c)`; present only when accepted.
    pub lifted_log_weight: Option<f64>,
}

impl AcceptDecision {
    pub fn lifted_weight(&self) -> Option<f64> {
        self.lifted_log_weight.map(f64::exp)
    }

    fn from_lifted(lifted: Option<f64>) -> Self {
        Self {
            accepted: lifted.is_some(),
            lifted_log_weight: lifted,
        }
    }
}

/// Accept a candidate with weight `w` against threshold `c` with probability
/// `min(1, w/c)`, lifting an accepted weight to `max(w, c)`.
pub fn accept_step(
    candidate_weight: f64,
    threshold: f64,
    rng: &mut RandomStream,
) -> Result<AcceptDecision, FilterError> {
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(FilterError::InvalidThreshold(threshold));
    }
    if !(candidate_weight.is_finite() && candidate_weight >= 0.0) {
        return Err(FilterError::InvalidWeight(candidate_weight));
    }
    let log_w = crate::logspace::ln_weight(candidate_weight);
    Ok(AcceptDecision::from_lifted(accept_log(log_w, threshold.ln(), rng)))
}

/// Log-domain acceptance test. Returns the lifted log weight when accepted.
///
/// A uniform is consumed only when `0 < w < c`; certain outcomes draw
/// nothing.
#[inline]
pub fn accept_log(log_w: f64, log_c: f64, rng: &mut RandomStream) -> Option<f64> {
    if log_w >= log_c {
        Some(log_w)
    } else if log_w == f64::NEG_INFINITY {
        None
    } else if rng.uniform() < (log_w - log_c).exp() {
        Some(log_c)
    } else {
        None
    }
}

/// `Σw / (P_t − 1)`.
pub fn step_factor_pfrc(weight_sum: f64, propagations: u64) -> Result<f64, FilterError> {
    if propagations < 2 {
        return Err(FilterError::InvalidCount(propagations));
    }
    Ok(weight_sum / (propagations - 1) as f64)
}

/// Default cap on propagations per step: `1000 · (N + 1)`.
pub fn default_propagation_budget(n: usize) -> u64 {
    1000 * (n as u64 + 1)
}

fn check_inputs<Y>(observations: &[Y], n: usize) -> Result<(), FilterError> {
    if n == 0 {
        return Err(FilterError::InvalidParticleCount);
    }
    if observations.is_empty() {
        return Err(FilterError::NoObservations);
    }
    Ok(())
}

fn initial_set<M: StateSpaceModel>(
    model: &M,
    n: usize,
    rng: &mut RandomStream,
) -> Result<ParticleSet<M::State>, FilterError> {
    let particles = (0..n)
        .map(|_| Particle::new(model.sample_initial(rng), 0.0))
        .collect();
    Ok(ParticleSet::new(0, particles)?)
}

#[inline]
fn checked_density(t: usize, log_w: f64) -> Result<f64, FilterError> {
    if log_w.is_nan() || log_w == f64::INFINITY {
        Err(FilterError::InvalidDensity {
            t,
            value: log_w.exp(),
        })
    } else {
        Ok(log_w)
    }
}

/// Bootstrap particle filter with multinomial resampling at every step.
///
/// If every weight vanishes at some step the sweep stops there with
/// `log_z = -inf` and `collapsed_at` set.
pub fn run_bpf<M: StateSpaceModel>(
    model: &M,
    observations: &[M::Observation],
    n: usize,
    rng: &mut RandomStream,
) -> Result<SweepResult<M::State>, FilterError> {
    check_inputs(observations, n)?;
    let mut current = initial_set(model, n, rng)?;
    let mut log_z = 0.0;
    let mut log_weight_sums = Vec::with_capacity(observations.len());
    let mut total_propagations = 0u64;
    let log_n = (n as f64).ln();

    for (t, y) in (1..).zip(observations) {
        let sampler = current.sampler()?;
        let mut particles = Vec::with_capacity(n);
        for _ in 0..n {
            let a = sampler.sample(rng);
            let x = model.sample_transition(t, &current.particles()[a].state, rng);
            let lw = checked_density(t, model.log_observation_density(t, &x, y))?;
            particles.push(Particle::new(x, lw));
        }
        total_propagations += n as u64;
        current = ParticleSet::new(t, particles)?;
        let log_sum = log_sum_exp(&current.log_weights());
        log_weight_sums.push(log_sum);
        if log_sum == f64::NEG_INFINITY {
            return Ok(SweepResult {
                log_z: f64::NEG_INFINITY,
                log_weight_sums,
                propagations: None,
                thresholds: Vec::new(),
                final_particles: current,
                total_propagations,
                collapsed_at: Some(t),
                biased: false,
            });
        }
        log_z += log_sum - log_n;
    }

    Ok(SweepResult {
        log_z,
        log_weight_sums,
        propagations: None,
        thresholds: Vec::new(),
        final_particles: current,
        total_propagations,
        collapsed_at: None,
        biased: false,
    })
}

/// Particle filter with rejection control.
///
/// For dynamic schedules all `N + 1` first candidates are propagated before
/// `c_t` is computed from their weights; those same candidates then go
/// through the acceptance test and rejection loops continue as usual with
/// `c_t` frozen for the rest of the step.
pub fn run_pfrc<M: StateSpaceModel>(
    model: &M,
    observations: &[M::Observation],
    n: usize,
    schedule: &ThresholdSchedule,
    rng: &mut RandomStream,
    max_propagations_per_step: u64,
) -> Result<SweepResult<M::State>, FilterError> {
    schedule.validate()?;
    rejection_sweep(
        model,
        observations,
        n,
        Rule::Schedule(schedule),
        rng,
        max_propagations_per_step,
    )
}

/// Alive particle filter: the `c_t → 0` limit of rejection control. A
/// candidate is accepted iff its weight is positive and is never lifted.
pub fn run_alive<M: StateSpaceModel>(
    model: &M,
    observations: &[M::Observation],
    n: usize,
    rng: &mut RandomStream,
    max_propagations_per_step: u64,
) -> Result<SweepResult<M::State>, FilterError> {
    rejection_sweep(
        model,
        observations,
        n,
        Rule::Alive,
        rng,
        max_propagations_per_step,
    )
}

#[derive(Clone, Copy)]
enum Rule<'a> {
    Schedule(&'a ThresholdSchedule),
    Alive,
}

#[derive(Clone, Copy)]
enum Acceptance {
    LogThreshold(f64),
    AcceptAll,
    Alive,
}

impl Acceptance {
    #[inline]
    fn decide(self, log_w: f64, rng: &mut RandomStream) -> Option<f64> {
        match self {
            Acceptance::LogThreshold(log_c) => accept_log(log_w, log_c, rng),
            Acceptance::AcceptAll => Some(log_w),
            Acceptance::Alive => (log_w > f64::NEG_INFINITY).then_some(log_w),
        }
    }
}

struct StepContext<'a, M: StateSpaceModel> {
    model: &'a M,
    previous: &'a ParticleSet<M::State>,
    sampler: CategoricalSampler,
    observation: &'a M::Observation,
    t: usize,
    budget: u64,
    propagations: u64,
}

impl<M: StateSpaceModel> StepContext<'_, M> {
    /// Resample, propagate and weight one candidate, counting the propagation.
    fn propose(&mut self, rng: &mut RandomStream) -> Result<(M::State, f64), FilterError> {
        if self.propagations >= self.budget {
            return Err(FilterError::PropagationBudgetExceeded {
                t: self.t,
                budget: self.budget,
            });
        }
        self.propagations += 1;
        let a = self.sampler.sample(rng);
        let x = self
            .model
            .sample_transition(self.t, &self.previous.particles()[a].state, rng);
        let lw = checked_density(
            self.t,
            self.model.log_observation_density(self.t, &x, self.observation),
        )?;
        Ok((x, lw))
    }
}

fn rejection_sweep<M: StateSpaceModel>(
    model: &M,
    observations: &[M::Observation],
    n: usize,
    rule: Rule<'_>,
    rng: &mut RandomStream,
    budget: u64,
) -> Result<SweepResult<M::State>, FilterError> {
    check_inputs(observations, n)?;
    let required = n as u64 + 1;
    if budget <= required {
        return Err(FilterError::InvalidBudget { budget, required });
    }
    let dynamic = matches!(rule, Rule::Schedule(s) if s.is_dynamic());

    let mut current = initial_set(model, n, rng)?;
    let mut log_z = 0.0;
    let mut log_weight_sums = Vec::with_capacity(observations.len());
    let mut propagations = Vec::with_capacity(observations.len());
    let mut thresholds = Vec::new();
    let mut total_propagations = 0u64;

    for (t, y) in (1..).zip(observations) {
        let mut ctx = StepContext {
            model,
            previous: &current,
            sampler: current.sampler()?,
            observation: y,
            t,
            budget,
            propagations: 0,
        };

        let first_pass = if dynamic {
            (0..=n)
                .map(|_| ctx.propose(rng))
                .collect::<Result<Vec<_>, _>>()?
        } else {
            Vec::new()
        };

        let acceptance = match rule {
            Rule::Alive => Acceptance::Alive,
            Rule::Schedule(schedule) => {
                let first_logs: Vec<f64> = first_pass.iter().map(|(_, lw)| *lw).collect();
                let threshold = log_threshold_for_step(
                    schedule,
                    t,
                    dynamic.then_some(first_logs.as_slice()),
                    Some(n + 1),
                )?;
                thresholds.push(threshold);
                match threshold {
                    Threshold::Value(c) => Acceptance::LogThreshold(c.ln()),
                    Threshold::AcceptAll => Acceptance::AcceptAll,
                }
            }
        };

        let mut first_pass = first_pass.into_iter();
        let mut accepted = Vec::with_capacity(n);
        // Slots 0..n fill S_t; slot n is the additional particle.
        for slot in 0..=n {
            let mut candidate = match first_pass.next() {
                Some(c) => c,
                None => ctx.propose(rng)?,
            };
            let lifted = loop {
                if let Some(lifted) = acceptance.decide(candidate.1, rng) {
                    break lifted;
                }
                candidate = ctx.propose(rng)?;
            };
            if slot < n {
                accepted.push(Particle::new(candidate.0, lifted));
            }
        }

        let p_t = ctx.propagations;
        propagations.push(p_t);
        total_propagations += p_t;
        current = ParticleSet::new(t, accepted)?;
        let log_sum = log_sum_exp(&current.log_weights());
        log_weight_sums.push(log_sum);
        if log_sum == f64::NEG_INFINITY {
            // Reachable only through the accept-all fallback.
            return Ok(SweepResult {
                log_z: f64::NEG_INFINITY,
                log_weight_sums,
                propagations: Some(propagations),
                thresholds,
                final_particles: current,
                total_propagations,
                collapsed_at: Some(t),
                biased: dynamic,
            });
        }
        log_z += log_sum - ((p_t - 1) as f64).ln();
    }

    Ok(SweepResult {
        log_z,
        log_weight_sums,
        propagations: Some(propagations),
        thresholds,
        final_particles: current,
        total_propagations,
        collapsed_at: None,
        biased: dynamic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `g_t ≡ k`, Gaussian random walk states.
    struct ConstantLikelihood {
        log_k: f64,
    }

    impl StateSpaceModel for ConstantLikelihood {
        type State = f64;
        type Observation = ();

        fn horizon(&self) -> usize {
            3
        }
        fn sample_initial(&self, rng: &mut RandomStream) -> f64 {
            rng.standard_normal()
        }
        fn sample_transition(&self, _t: usize, prev: &f64, rng: &mut RandomStream) -> f64 {
            prev + rng.standard_normal()
        }
        fn log_observation_density(&self, _t: usize, _x: &f64, _y: &()) -> f64 {
            self.log_k
        }
    }

    /// Weight zero for negative states, one otherwise.
    struct HalfLine;

    impl StateSpaceModel for HalfLine {
        type State = f64;
        type Observation = ();

        fn horizon(&self) -> usize {
            2
        }
        fn sample_initial(&self, _rng: &mut RandomStream) -> f64 {
            0.0
        }
        fn sample_transition(&self, _t: usize, _prev: &f64, rng: &mut RandomStream) -> f64 {
            rng.standard_normal()
        }
        fn log_observation_density(&self, _t: usize, x: &f64, _y: &()) -> f64 {
            if *x >= 0.0 {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        }
    }

    #[test]
    fn accept_step_certain_and_impossible_cases() {
        let mut rng = RandomStream::new(0, 0);
        let d = accept_step(0.8, 0.65, &mut rng).unwrap();
        assert!(d.accepted);
        assert!((d.lifted_weight().unwrap() - 0.8).abs() < 1e-15);
        for _ in 0..1000 {
            assert!(!accept_step(0.0, 1e-300, &mut rng).unwrap().accepted);
        }
        assert_eq!(
            accept_step(0.5, 0.0, &mut rng),
            Err(FilterError::InvalidThreshold(0.0))
        );
        assert!(accept_step(0.5, f64::INFINITY, &mut rng).is_err());
        assert_eq!(
            accept_step(-1.0, 0.5, &mut rng),
            Err(FilterError::InvalidWeight(-1.0))
        );
    }

    #[test]
    fn accept_step_below_threshold_frequency_and_lift() {
        let mut rng = RandomStream::new(5, 0);
        let trials = 100_000;
        let p = 0.5 / 0.65;
        let mut hits = 0;
        for _ in 0..trials {
            let d = accept_step(0.5, 0.65, &mut rng).unwrap();
            if d.accepted {
                hits += 1;
                assert!((d.lifted_weight().unwrap() - 0.65).abs() < 1e-15);
            } else {
                assert!(d.lifted_log_weight.is_none());
            }
        }
        let freq = hits as f64 / trials as f64;
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((freq - p).abs() < 3.0 * sigma, "{freq} vs {p}");
    }

    #[test]
    fn certain_acceptance_consumes_no_randomness() {
        let mut a = RandomStream::new(9, 1);
        let mut b = RandomStream::new(9, 1);
        accept_log(0.0, -1.0, &mut a);
        accept_log(f64::NEG_INFINITY, -1.0, &mut a);
        assert_eq!(a.uniform(), b.uniform());
    }

    #[test]
    fn step_factor() {
        assert!((step_factor_pfrc(1.3, 3).unwrap() - 0.65).abs() < 1e-15);
        let (n, c) = (7u64, 0.3);
        assert!((step_factor_pfrc(n as f64 * c, n + 1).unwrap() - c).abs() < 1e-15);
        assert_eq!(step_factor_pfrc(1.0, 1), Err(FilterError::InvalidCount(1)));
    }

    #[test]
    fn unit_likelihood_gives_zero_log_z() {
        let model = ConstantLikelihood { log_k: 0.0 };
        let obs = vec![(); 3];
        for n in [1, 2, 17] {
            let bpf = run_bpf(&model, &obs, n, &mut RandomStream::new(1, 0)).unwrap();
            assert_eq!(bpf.log_z, 0.0);
            assert_eq!(bpf.total_propagations, 3 * n as u64);
            assert!(bpf.propagations.is_none());

            let rc = run_pfrc(
                &model,
                &obs,
                n,
                &ThresholdSchedule::Constant(1.0),
                &mut RandomStream::new(1, 0),
                default_propagation_budget(n),
            )
            .unwrap();
            assert_eq!(rc.log_z, 0.0);
            assert_eq!(rc.propagations, Some(vec![n as u64 + 1; 3]));
            assert_eq!(rc.total_propagations, 3 * (n as u64 + 1));
        }
    }

    #[test]
    fn constant_likelihood_matches_t_log_k_in_both_filters() {
        let log_k = 0.37f64.ln();
        let model = ConstantLikelihood { log_k };
        let obs = vec![(); 4];
        let bpf = run_bpf(&model, &obs, 8, &mut RandomStream::new(2, 0)).unwrap();
        let rc = run_pfrc(
            &model,
            &obs,
            8,
            &ThresholdSchedule::Constant(0.1),
            &mut RandomStream::new(2, 0),
            default_propagation_budget(8),
        )
        .unwrap();
        assert!((bpf.log_z - 4.0 * log_k).abs() < 1e-12);
        assert!((rc.log_z - 4.0 * log_k).abs() < 1e-12);
    }

    #[test]
    fn pfrc_weights_respect_floor_and_counts() {
        let model = HalfLine;
        let obs = vec![(); 2];
        let n = 50;
        let res = run_pfrc(
            &model,
            &obs,
            n,
            &ThresholdSchedule::Constant(0.5),
            &mut RandomStream::new(3, 0),
            default_propagation_budget(n),
        )
        .unwrap();
        for p in res.final_particles.particles() {
            assert!(p.log_weight >= 0.5f64.ln());
        }
        for &p_t in res.propagations.as_ref().unwrap() {
            assert!(p_t >= n as u64 + 1);
        }
        assert_eq!(
            res.total_propagations,
            res.propagations.as_ref().unwrap().iter().sum::<u64>()
        );
    }

    #[test]
    fn bpf_collapse_reports_negative_infinity() {
        struct Impossible;
        impl StateSpaceModel for Impossible {
            type State = ();
            type Observation = ();
            fn horizon(&self) -> usize {
                3
            }
            fn sample_initial(&self, _: &mut RandomStream) {}
            fn sample_transition(&self, _: usize, _: &(), _: &mut RandomStream) {}
            fn log_observation_density(&self, t: usize, _: &(), _: &()) -> f64 {
                if t == 2 {
                    f64::NEG_INFINITY
                } else {
                    0.0
                }
            }
        }
        let res = run_bpf(&Impossible, &[(), (), ()], 4, &mut RandomStream::new(0, 0)).unwrap();
        assert_eq!(res.log_z, f64::NEG_INFINITY);
        assert_eq!(res.collapsed_at, Some(2));
        assert_eq!(res.log_weight_sums.len(), 2);
        assert_eq!(res.z(), 0.0);

        let err = run_alive(&Impossible, &[(), (), ()], 4, &mut RandomStream::new(0, 0), 100)
            .unwrap_err();
        assert_eq!(err, FilterError::PropagationBudgetExceeded { t: 2, budget: 100 });
    }

    #[test]
    fn argument_validation() {
        let model = ConstantLikelihood { log_k: 0.0 };
        let mut rng = RandomStream::new(0, 0);
        assert_eq!(
            run_bpf(&model, &[(); 2], 0, &mut rng).unwrap_err(),
            FilterError::InvalidParticleCount
        );
        assert_eq!(
            run_bpf(&model, &[], 3, &mut rng).unwrap_err(),
            FilterError::NoObservations
        );
        assert_eq!(
            run_pfrc(&model, &[()], 3, &ThresholdSchedule::Constant(1.0), &mut rng, 4)
                .unwrap_err(),
            FilterError::InvalidBudget { budget: 4, required: 4 }
        );
        assert!(matches!(
            run_pfrc(&model, &[()], 3, &ThresholdSchedule::Constant(-1.0), &mut rng, 100),
            Err(FilterError::Schedule(ScheduleError::InvalidThreshold(_)))
        ));
    }

    #[test]
    fn invalid_density_is_reported() {
        struct Broken;
        impl StateSpaceModel for Broken {
            type State = ();
            type Observation = ();
            fn horizon(&self) -> usize {
                1
            }
            fn sample_initial(&self, _: &mut RandomStream) {}
            fn sample_transition(&self, _: usize, _: &(), _: &mut RandomStream) {}
            fn log_observation_density(&self, _: usize, _: &(), _: &()) -> f64 {
                f64::NAN
            }
        }
        assert!(matches!(
            run_bpf(&Broken, &[()], 2, &mut RandomStream::new(0, 0)),
            Err(FilterError::InvalidDensity { t: 1, .. })
        ));
    }

    #[test]
    fn alive_with_positive_likelihood_never_rejects() {
        let model = ConstantLikelihood { log_k: -3.0 };
        let res = run_alive(&model, &[(); 3], 10, &mut RandomStream::new(4, 0), 1000).unwrap();
        assert_eq!(res.propagations, Some(vec![11; 3]));
        assert!(res.thresholds.is_empty());
    }

    #[test]
    fn dynamic_schedule_marks_result_biased() {
        let model = HalfLine;
        let res = run_pfrc(
            &model,
            &[(), ()],
            5,
            &ThresholdSchedule::DynamicQuantile(0.5),
            &mut RandomStream::new(8, 0),
            1000,
        )
        .unwrap();
        assert!(res.biased);
        assert_eq!(res.thresholds.len(), 2);
        for &p_t in res.propagations.as_ref().unwrap() {
            assert!(p_t >= 6);
        }
    }
}

//! State-space model contract, weighted particles, seeded random streams and
//! categorical resampling shared by every filter.
//!
//! Weights are carried in the log domain throughout. A weight of zero is
//! represented by `f64::NEG_INFINITY`; positive infinity and NaN are never
//! legal.

use std::fmt::Debug;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SsmError {
    #[error("all weights are zero")]
    AllWeightsZero,
    #[error("invalid weight {value} at index {index}")]
    InvalidWeight { index: usize, value: f64 },
    #[error("model does not provide an observation sampler")]
    MissingObservationSampler,
    #[error("particle set must contain at least one particle")]
    EmptyParticleSet,
}

/// A seeded, reproducible random stream.
///
/// `(seed, stream_id)` fully determines the output sequence. Distinct stream
/// ids select disjoint ChaCha8 keystreams under the same key, so replicate
/// lanes can share a seed and still be independent.
#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform draw on `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Gaussian draw with the given mean and *variance*.
    #[inline]
    pub fn normal(&mut self, mean: f64, variance: f64) -> f64 {
        mean + variance.sqrt() * self.standard_normal()
    }

    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// A discrete-time state-space model
/// `x_0 ~ μ0`, `x_t ~ f_t(· | x_{t-1})`, `y_t ~ g_t(· | x_t)`.
///
/// Time indices passed to the model are 1-based (`t = 1..=T`). All randomness
/// must come from the supplied stream.
pub trait StateSpaceModel: Sync {
    type State: Clone + Debug + Send + Sync;
    type Observation: Clone + Debug + Send + Sync;

    /// Number of observation steps `T` produced by [`simulate`].
    fn horizon(&self) -> usize;

    fn sample_initial(&self, rng: &mut RandomStream) -> Self::State;

    fn sample_transition(
        &self,
        t: usize,
        previous: &Self::State,
        rng: &mut RandomStream,
    ) -> Self::State;

    /// `log g_t(y | x)`. Must be finite or `-inf`.
    fn log_observation_density(
        &self,
        t: usize,
        state: &Self::State,
        observation: &Self::Observation,
    ) -> f64;

    fn observation_density(
        &self,
        t: usize,
        state: &Self::State,
        observation: &Self::Observation,
    ) -> f64 {
        self.log_observation_density(t, state, observation).exp()
    }

    /// Draw `y_t ~ g_t(· | x_t)`. Only needed for simulation.
    fn sample_observation(
        &self,
        _t: usize,
        _state: &Self::State,
        _rng: &mut RandomStream,
    ) -> Result<Self::Observation, SsmError> {
        Err(SsmError::MissingObservationSampler)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle<S> {
    pub state: S,
    pub log_weight: f64,
}

impl<S> Particle<S> {
    pub fn new(state: S, log_weight: f64) -> Self {
        Self { state, log_weight }
    }

    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }
}

/// The weighted particle set `S_t` at one time index.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet<S> {
    time_index: usize,
    particles: Vec<Particle<S>>,
}

impl<S> ParticleSet<S> {
    pub fn new(time_index: usize, particles: Vec<Particle<S>>) -> Result<Self, SsmError> {
        if particles.is_empty() {
            return Err(SsmError::EmptyParticleSet);
        }
        for (index, p) in particles.iter().enumerate() {
            check_log_weight(index, p.log_weight)?;
        }
        Ok(Self {
            time_index,
            particles,
        })
    }

    pub fn time_index(&self) -> usize {
        self.time_index
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn particles(&self) -> &[Particle<S>] {
        &self.particles
    }

    pub fn log_weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.log_weight).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(Particle::weight).collect()
    }

    /// Categorical sampler over this set's weights.
    pub fn sampler(&self) -> Result<CategoricalSampler, SsmError> {
        CategoricalSampler::from_log_weights(&self.log_weights())
    }
}

fn check_log_weight(index: usize, log_weight: f64) -> Result<(), SsmError> {
    if log_weight.is_nan() || log_weight == f64::INFINITY {
        Err(SsmError::InvalidWeight {
            index,
            value: log_weight.exp(),
        })
    } else {
        Ok(())
    }
}

/// Inverse-CDF sampler for a categorical distribution with unnormalized
/// event probabilities. Each draw consumes exactly one uniform.
#[derive(Debug, Clone)]
pub struct CategoricalSampler {
    cumulative: Vec<f64>,
    last_positive: usize,
}

impl CategoricalSampler {
    pub fn from_weights(weights: &[f64]) -> Result<Self, SsmError> {
        for (index, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(SsmError::InvalidWeight { index, value: w });
            }
        }
        Self::build(weights.iter().copied())
    }

    /// Weights are normalized by their maximum before exponentiation, so
    /// arbitrarily small log weights are fine.
    pub fn from_log_weights(log_weights: &[f64]) -> Result<Self, SsmError> {
        for (index, &lw) in log_weights.iter().enumerate() {
            check_log_weight(index, lw)?;
        }
        let max = log_weights
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(SsmError::AllWeightsZero);
        }
        Self::build(log_weights.iter().map(|&lw| (lw - max).exp()))
    }

    fn build(weights: impl Iterator<Item = f64>) -> Result<Self, SsmError> {
        let mut cumulative = Vec::new();
        let mut total = 0.0;
        let mut last_positive = None;
        for (i, w) in weights.enumerate() {
            if w > 0.0 {
                last_positive = Some(i);
            }
            total += w;
            cumulative.push(total);
        }
        match last_positive {
            Some(last_positive) if total > 0.0 => Ok(Self {
                cumulative,
                last_positive,
            }),
            _ => Err(SsmError::AllWeightsZero),
        }
    }

    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }

    #[inline]
    pub fn sample(&self, rng: &mut RandomStream) -> usize {
        let total = self.cumulative[self.cumulative.len() - 1];
        let target = rng.uniform() * total;
        let index = self.cumulative.partition_point(|&c| c <= target);
        // Rounding in `u * total` can land on the final boundary.
        index.min(self.last_positive)
    }
}

/// Draw one index `n` with probability `w_n / Σ w`.
pub fn resample_index(weights: &[f64], rng: &mut RandomStream) -> Result<usize, SsmError> {
    Ok(CategoricalSampler::from_weights(weights)?.sample(rng))
}

/// One forward draw from the model's joint law.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S, Y> {
    /// `x_0..=x_T`
    pub states: Vec<S>,
    /// `y_1..=y_T`
    pub observations: Vec<Y>,
}

pub fn simulate<M: StateSpaceModel>(
    model: &M,
    rng: &mut RandomStream,
) -> Result<Trajectory<M::State, M::Observation>, SsmError> {
    let horizon = model.horizon();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut observations = Vec::with_capacity(horizon);
    let mut x = model.sample_initial(rng);
    states.push(x.clone());
    for t in 1..=horizon {
        x = model.sample_transition(t, &x, rng);
        observations.push(model.sample_observation(t, &x, rng)?);
        states.push(x.clone());
    }
    Ok(Trajectory {
        states,
        observations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frequencies(weights: &[f64], draws: usize, seed: u64) -> Vec<usize> {
        let sampler = CategoricalSampler::from_weights(weights).unwrap();
        let mut rng = RandomStream::new(seed, 0);
        let mut counts = vec![0; weights.len()];
        for _ in 0..draws {
            counts[sampler.sample(&mut rng)] += 1;
        }
        counts
    }

    #[test]
    fn degenerate_categorical_always_picks_the_only_mass() {
        let mut rng = RandomStream::new(1, 0);
        for _ in 0..1000 {
            assert_eq!(resample_index(&[1.0, 0.0, 0.0], &mut rng).unwrap(), 0);
        }
        for _ in 0..1000 {
            assert_eq!(resample_index(&[0.0, 0.0, 3.0, 0.0], &mut rng).unwrap(), 2);
        }
    }

    #[test]
    fn symmetric_pair_is_fair() {
        let draws = 100_000;
        let counts = frequencies(&[1.0, 1.0], draws, 7);
        let freq = counts[0] as f64 / draws as f64;
        let sigma = (0.25 / draws as f64).sqrt();
        assert!((freq - 0.5).abs() < 3.0 * sigma, "freq {freq}");
    }

    #[test]
    fn three_way_frequencies_within_binomial_bands() {
        let draws = 100_000;
        let probs = [0.2, 0.3, 0.5];
        let counts = frequencies(&probs, draws, 11);
        for (c, p) in counts.iter().zip(probs) {
            let freq = *c as f64 / draws as f64;
            let sigma = (p * (1.0 - p) / draws as f64).sqrt();
            assert!((freq - p).abs() < 3.0 * sigma, "freq {freq} vs {p}");
        }
    }

    #[test]
    fn rejects_bad_weights() {
        let mut rng = RandomStream::new(0, 0);
        assert_eq!(
            resample_index(&[0.0, 0.0], &mut rng),
            Err(SsmError::AllWeightsZero)
        );
        assert!(matches!(
            resample_index(&[1.0, -0.5], &mut rng),
            Err(SsmError::InvalidWeight { index: 1, .. })
        ));
        assert!(matches!(
            resample_index(&[f64::NAN], &mut rng),
            Err(SsmError::InvalidWeight { index: 0, .. })
        ));
        assert!(matches!(
            resample_index(&[1.0, f64::INFINITY], &mut rng),
            Err(SsmError::InvalidWeight { index: 1, .. })
        ));
        assert!(matches!(
            CategoricalSampler::from_log_weights(&[0.0, f64::INFINITY]),
            Err(SsmError::InvalidWeight { index: 1, .. })
        ));
        assert_eq!(
            CategoricalSampler::from_log_weights(&[f64::NEG_INFINITY]).unwrap_err(),
            SsmError::AllWeightsZero
        );
    }

    #[test]
    fn log_weights_far_below_underflow_still_sample() {
        let sampler = CategoricalSampler::from_log_weights(&[-2000.0, -2000.0 + 2f64.ln()]).unwrap();
        let mut rng = RandomStream::new(3, 0);
        let hits = (0..30_000).filter(|_| sampler.sample(&mut rng) == 1).count();
        let freq = hits as f64 / 30_000.0;
        assert!((freq - 2.0 / 3.0).abs() < 0.01);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<f64> = {
            let mut r = RandomStream::new(42, 3);
            (0..8).map(|_| r.uniform()).collect()
        };
        let b: Vec<f64> = {
            let mut r = RandomStream::new(42, 3);
            (0..8).map(|_| r.uniform()).collect()
        };
        let c: Vec<f64> = {
            let mut r = RandomStream::new(42, 4);
            (0..8).map(|_| r.uniform()).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn empty_particle_set_is_rejected() {
        assert_eq!(
            ParticleSet::<f64>::new(0, vec![]).unwrap_err(),
            SsmError::EmptyParticleSet
        );
        // Zero-weight particles are legal as long as the set is not all-zero
        // at resampling time.
        let set = ParticleSet::new(
            1,
            vec![Particle::new(0.0, f64::NEG_INFINITY), Particle::new(1.0, 0.0)],
        )
        .unwrap();
        assert!(set.sampler().is_ok());
    }
}

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::ssm::{CategoricalSampler, RandomStream, SsmError, StateSpaceModel};

const ROW_TOLERANCE: f64 = 1e-12;

/// Finite hidden Markov model with `K` states and `L` observation symbols.
///
/// `x_0 ~ initial`, `x_t ~ transition[x_{t−1}]`, `y_t ~ emission[x_t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteHmm {
    pub initial: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    pub emission: Vec<Vec<f64>>,
}

fn check_simplex(name: &str, row: &[f64]) -> Result<(), ModelError> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(ModelError::InvalidHmm(format!("{name} has a negative or non-finite entry")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_TOLERANCE {
        return Err(ModelError::InvalidHmm(format!("{name} sums to {sum}")));
    }
    Ok(())
}

impl DiscreteHmm {
    pub fn num_states(&self) -> usize {
        self.initial.len()
    }

    pub fn num_symbols(&self) -> usize {
        self.emission.first().map_or(0, Vec::len)
    }

    /// Random model with every row drawn from a flat Dirichlet.
    pub fn random(states: usize, symbols: usize, rng: &mut RandomStream) -> Self {
        let mut simplex = |len: usize| {
            let raw: Vec<f64> = (0..len).map(|_| -(1.0 - rng.uniform()).ln()).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / total).collect::<Vec<f64>>()
        };
        let initial = simplex(states);
        let transition = (0..states).map(|_| simplex(states)).collect();
        let emission = (0..states).map(|_| simplex(symbols)).collect();
        Self {
            initial,
            transition,
            emission,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let k = self.num_states();
        if k == 0 {
            return Err(ModelError::InvalidHmm("no states".into()));
        }
        check_simplex("initial distribution", &self.initial)?;
        if self.transition.len() != k || self.emission.len() != k {
            return Err(ModelError::InvalidHmm(format!(
                "expected {k} transition and emission rows"
            )));
        }
        let l = self.num_symbols();
        if l == 0 {
            return Err(ModelError::InvalidHmm("no observation symbols".into()));
        }
        for (i, row) in self.transition.iter().enumerate() {
            if row.len() != k {
                return Err(ModelError::InvalidHmm(format!("transition row {i} has wrong length")));
            }
            check_simplex(&format!("transition row {i}"), row)?;
        }
        for (i, row) in self.emission.iter().enumerate() {
            if row.len() != l {
                return Err(ModelError::InvalidHmm(format!("emission row {i} has wrong length")));
            }
            check_simplex(&format!("emission row {i}"), row)?;
        }
        Ok(())
    }
}

/// A [`DiscreteHmm`] wrapped as a state-space model over `T` steps.
#[derive(Debug, Clone)]
pub struct HmmModel {
    hmm: DiscreteHmm,
    horizon: usize,
    initial: CategoricalSampler,
    transition: Vec<CategoricalSampler>,
    emission: Vec<CategoricalSampler>,
    log_emission: Vec<Vec<f64>>,
}

pub fn hmm_model(hmm: DiscreteHmm, horizon: usize) -> Result<HmmModel, ModelError> {
    HmmModel::new(hmm, horizon)
}

impl HmmModel {
    pub fn new(hmm: DiscreteHmm, horizon: usize) -> Result<Self, ModelError> {
        hmm.validate()?;
        if horizon == 0 {
            return Err(ModelError::InvalidHorizon);
        }
        let sampler = |row: &[f64]| {
            CategoricalSampler::from_weights(row)
                .map_err(|e| ModelError::InvalidHmm(e.to_string()))
        };
        let initial = sampler(&hmm.initial)?;
        let transition = hmm.transition.iter().map(|r| sampler(r)).collect::<Result<_, _>>()?;
        let emission = hmm.emission.iter().map(|r| sampler(r)).collect::<Result<_, _>>()?;
        let log_emission = hmm
            .emission
            .iter()
            .map(|row| row.iter().map(|&p| crate::logspace::ln_weight(p)).collect())
            .collect();
        Ok(Self {
            hmm,
            horizon,
            initial,
            transition,
            emission,
            log_emission,
        })
    }

    pub fn hmm(&self) -> &DiscreteHmm {
        &self.hmm
    }
}

impl StateSpaceModel for HmmModel {
    type State = usize;
    type Observation = usize;

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn sample_initial(&self, rng: &mut RandomStream) -> usize {
        self.initial.sample(rng)
    }

    fn sample_transition(&self, _t: usize, previous: &usize, rng: &mut RandomStream) -> usize {
        self.transition[*previous].sample(rng)
    }

    /// Symbols outside the alphabet have zero density.
    fn log_observation_density(&self, _t: usize, state: &usize, observation: &usize) -> f64 {
        self.log_emission[*state]
            .get(*observation)
            .copied()
            .unwrap_or(f64::NEG_INFINITY)
    }

    fn observation_density(&self, _t: usize, state: &usize, observation: &usize) -> f64 {
        self.hmm.emission[*state].get(*observation).copied().unwrap_or(0.0)
    }

    fn sample_observation(
        &self,
        _t: usize,
        state: &usize,
        rng: &mut RandomStream,
    ) -> Result<usize, SsmError> {
        Ok(self.emission[*state].sample(rng))
    }
}

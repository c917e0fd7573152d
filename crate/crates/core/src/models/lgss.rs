use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::ssm::{RandomStream, SsmError, StateSpaceModel};

/// Parameters of `x_0 ~ N(m0, v0)`, `x_t ~ N(a·x_{t−1}, q)`, `y_t ~ N(x_t, r)`.
///
/// All second arguments are variances. When `outlier_prob > 0` simulated
/// observations are drawn from `(1 − p)·N(x_t, r) + p·N(0, outlier_var)`
/// while the filtering density stays the clean `N(x_t, r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LgssParams {
    pub a: f64,
    pub q: f64,
    pub r: f64,
    pub m0: f64,
    pub v0: f64,
    pub outlier_prob: f64,
    pub outlier_var: f64,
}

impl Default for LgssParams {
    fn default() -> Self {
        Self {
            a: 0.8,
            q: 0.25,
            r: 0.1,
            m0: 0.0,
            v0: 0.25,
            outlier_prob: 0.1,
            outlier_var: 1.0,
        }
    }
}

impl LgssParams {
    /// Same dynamics without data contamination.
    pub fn clean() -> Self {
        Self {
            outlier_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("q", self.q),
            ("r", self.r),
            ("v0", self.v0),
            ("outlier_var", self.outlier_var),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::InvalidParameter { name, value });
            }
        }
        for (name, value) in [("a", self.a), ("m0", self.m0)] {
            if !value.is_finite() {
                return Err(ModelError::InvalidParameter { name, value });
            }
        }
        if !(0.0..=1.0).contains(&self.outlier_prob) {
            return Err(ModelError::InvalidParameter {
                name: "outlier_prob",
                value: self.outlier_prob,
            });
        }
        Ok(())
    }
}

pub fn normal_log_density(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * PI * variance).ln() + d * d / variance)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LgssModel {
    params: LgssParams,
    horizon: usize,
}

pub fn lgss_model(params: LgssParams, horizon: usize) -> Result<LgssModel, ModelError> {
    LgssModel::new(params, horizon)
}

impl LgssModel {
    pub fn new(params: LgssParams, horizon: usize) -> Result<Self, ModelError> {
        params.validate()?;
        if horizon == 0 {
            return Err(ModelError::InvalidHorizon);
        }
        Ok(Self { params, horizon })
    }

    pub fn params(&self) -> &LgssParams {
        &self.params
    }

    /// Observation draw that also reports whether it came from the outlier
    /// component.
    pub fn sample_observation_tagged(&self, x: f64, rng: &mut RandomStream) -> (f64, bool) {
        let p = &self.params;
        if p.outlier_prob > 0.0 && rng.bernoulli(p.outlier_prob) {
            (rng.normal(0.0, p.outlier_var), true)
        } else {
            (rng.normal(x, p.r), false)
        }
    }
}

impl StateSpaceModel for LgssModel {
    type State = f64;
    type Observation = f64;

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn sample_initial(&self, rng: &mut RandomStream) -> f64 {
        rng.normal(self.params.m0, self.params.v0)
    }

    fn sample_transition(&self, _t: usize, previous: &f64, rng: &mut RandomStream) -> f64 {
        rng.normal(self.params.a * previous, self.params.q)
    }

    fn log_observation_density(&self, _t: usize, state: &f64, observation: &f64) -> f64 {
        normal_log_density(*observation, *state, self.params.r)
    }

    fn sample_observation(
        &self,
        _t: usize,
        state: &f64,
        rng: &mut RandomStream,
    ) -> Result<f64, SsmError> {
        Ok(self.sample_observation_tagged(*state, rng).0)
    }
}

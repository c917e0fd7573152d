use crate::ssm::{RandomStream, SsmError, StateSpaceModel};

pub const FAIR_HEAD_PROB: f64 = 0.5;
pub const BIASED_HEAD_PROB: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Coin {
    Fair,
    Biased,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Flip {
    Heads,
    Tails,
}

/// Pick one of two coins uniformly at random and flip it once.
///
/// `T = 1`. The coin is chosen by the transition `f_1`, independently of
/// `x_0`, so every propagated candidate is a fresh uniform pick. This is what
/// makes restarted candidates in a rejection loop independent of the
/// resampled ancestor, even with a single particle.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CoinModel;

pub fn coin_model() -> CoinModel {
    CoinModel
}

impl CoinModel {
    pub fn head_prob(coin: Coin) -> f64 {
        match coin {
            Coin::Fair => FAIR_HEAD_PROB,
            Coin::Biased => BIASED_HEAD_PROB,
        }
    }

    /// `g(y | coin)`, tabulated so that tails of the biased coin is exactly 0.2.
    pub fn flip_prob(coin: Coin, flip: Flip) -> f64 {
        match (coin, flip) {
            (Coin::Fair, _) => 0.5,
            (Coin::Biased, Flip::Heads) => BIASED_HEAD_PROB,
            (Coin::Biased, Flip::Tails) => 0.2,
        }
    }

    fn pick(rng: &mut RandomStream) -> Coin {
        if rng.bernoulli(0.5) {
            Coin::Biased
        } else {
            Coin::Fair
        }
    }
}

impl StateSpaceModel for CoinModel {
    type State = Coin;
    type Observation = Flip;

    fn horizon(&self) -> usize {
        1
    }

    fn sample_initial(&self, rng: &mut RandomStream) -> Coin {
        Self::pick(rng)
    }

    fn sample_transition(&self, _t: usize, _previous: &Coin, rng: &mut RandomStream) -> Coin {
        Self::pick(rng)
    }

    fn log_observation_density(&self, _t: usize, state: &Coin, observation: &Flip) -> f64 {
        Self::flip_prob(*state, *observation).ln()
    }

    fn observation_density(&self, _t: usize, state: &Coin, observation: &Flip) -> f64 {
        Self::flip_prob(*state, *observation)
    }

    fn sample_observation(
        &self,
        _t: usize,
        state: &Coin,
        rng: &mut RandomStream,
    ) -> Result<Flip, SsmError> {
        Ok(if rng.bernoulli(Self::head_prob(*state)) {
            Flip::Heads
        } else {
            Flip::Tails
        })
    }
}

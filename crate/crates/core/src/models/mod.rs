//! Built-in models: linear-Gaussian with outlier-contaminated data
//! generation, the two-coin model, and finite discrete HMMs.

mod coin;
mod dataset;
mod hmm;
mod lgss;

use thiserror::Error;

pub use coin::{coin_model, Coin, CoinModel, Flip, BIASED_HEAD_PROB, FAIR_HEAD_PROB};
pub use dataset::{read_dataset, write_dataset, write_states, CsvValue, DatasetError};
pub use hmm::{hmm_model, DiscreteHmm, HmmModel};
pub use lgss::{lgss_model, normal_log_density, LgssModel, LgssParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("parameter `{name}` = {value} is out of range")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("horizon must be at least 1")]
    InvalidHorizon,
    #[error("{0}")]
    InvalidHmm(String),
}

//! Sequential Monte Carlo for state-space models: the bootstrap particle
//! filter, the particle filter with rejection control (PF-RC) and its
//! unbiased marginal-likelihood estimator, and the alive particle filter.
//!
//! ```
//! use pfrc_core::filters::{default_propagation_budget, run_pfrc};
//! use pfrc_core::models::{coin_model, Flip};
//! use pfrc_core::ssm::RandomStream;
//! use pfrc_core::thresholds::ThresholdSchedule;
//!
//! let mut rng = RandomStream::new(7, 0);
//! let sweep = run_pfrc(
//!     &coin_model(),
//!     &[Flip::Heads],
//!     16,
//!     &ThresholdSchedule::Constant(0.65),
//!     &mut rng,
//!     default_propagation_budget(16),
//! )
//! .unwrap();
//! assert!(sweep.propagations.unwrap()[0] >= 17);
//! ```

pub mod experiment;
pub mod filters;
pub mod logspace;
pub mod models;
pub mod oracles;
pub mod ssm;
pub mod thresholds;

pub use filters::{run_alive, run_bpf, run_pfrc, SweepResult};
pub use ssm::{RandomStream, StateSpaceModel};
pub use thresholds::{Threshold, ThresholdSchedule};

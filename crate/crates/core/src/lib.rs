//! Sparse system identification with the ℓ1-regularized RLS filter.
//!
//! * [`stats`]: Gaussian CDFs, sign moments of Gaussian pairs, Henze-Zirkler test.
//! * [`filters`]: the adaptive filter in its original and compact update forms.
//! * [`theory`]: transient mean and mean-square models.
//! * [`sim`]: Monte Carlo ensembles over an AR(1)-driven sparse system.
//! * [`cli`]: the experiment pipelines behind the `l1rls` binary.

pub mod cli;
pub mod error;
pub mod filters;
pub mod plot;
pub mod record;
pub mod sim;
pub mod stats;
pub mod theory;

pub use error::{Error, Result};
pub use filters::{FilterState, StepOutput};
pub use record::{Provenance, TrajectoryRecord};
pub use sim::{ExperimentConfig, PairSampleSet};
pub use theory::{run_theory, SystemSpec, TheoryState};

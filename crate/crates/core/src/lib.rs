//! Adaptive importance sampling with Gaussian-mixture proposals whose order is
//! chosen by the cross-entropy information criterion (CIC).
//!
//! The entry point is [`pipeline::run_cic_is`]; [`benchmark`] holds the
//! parabolic limit-state experiment and its baselines.

pub mod benchmark;
pub mod cic;
pub mod cli;
pub mod em;
pub mod error;
pub mod estimators;
pub mod gmm;
pub mod math;
pub mod pipeline;
pub mod quadrature;
pub mod rng;

pub use cic::{select_model_order, CicEntry, CicTrace, StopReason};
pub use em::{em_fit, em_fit_multistart, EmConfig, EmOutcome, EmStatus, MultistartOutcome};
pub use error::{Error, Result};
pub use estimators::{BatchStore, WeightedPoint};
pub use gmm::GmmParams;
pub use math::SpdMatrix;
pub use pipeline::{run_cic_is, PipelineConfig, PipelineResult, Problem};
pub use rng::StreamSeed;

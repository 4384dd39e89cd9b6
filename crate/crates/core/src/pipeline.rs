//! The iterative CIC-based approximation of the target followed by a final
//! importance-sampling batch.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cic::{k_min_schedule, select_model_order, CicTrace, StopReason};
use crate::em::EmConfig;
use crate::error::{Error, Result};
use crate::estimators::{rho_estimate_batch, rho_estimate_cumulative, BatchStore};
use crate::gmm::{GmmDocument, GmmParams};
use crate::math::SpdMatrix;
use crate::rng::{purpose, StreamSeed};

/// Batch sizes used for the structural-safety benchmark: 1000 for the first seven draws, 1700 for the last.
pub const DEFAULT_TAU: usize = 7;
pub const DEFAULT_BATCH_SIZE: usize = 1000;
pub const DEFAULT_FINAL_BATCH_SIZE: usize = 1700;

/// Components of the default initial proposal.
pub const INITIAL_COMPONENTS: usize = 30;

/// An unnormalized nonnegative target, given through `ln r(x)`.
#[derive(Clone)]
pub struct Problem {
    dim: usize,
    log_r: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    description: String,
}

impl Problem {
    /// `log_r` must be deterministic; `-∞` encodes `r(x) = 0`.
    pub fn new<F>(dim: usize, description: impl Into<String>, log_r: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self { dim, log_r: Arc::new(log_r), description: description.into() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn log_r(&self, x: &[f64]) -> f64 {
        (self.log_r)(x)
    }
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem").field("dim", &self.dim).field("description", &self.description).finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub tau: usize,
    /// `n_0, ..., n_tau`; the last entry is the final estimation batch.
    pub batch_sizes: Vec<usize>,
    /// Drawn with [`default_initial_proposal`] from the run's seed when `None`.
    pub initial_proposal: Option<GmmParams>,
    pub em: EmConfig,
    pub master_seed: u64,
}

impl PipelineConfig {
    pub fn new(tau: usize, batch_size: usize, final_batch_size: usize, master_seed: u64) -> Self {
        let mut batch_sizes = vec![batch_size; tau];
        batch_sizes.push(final_batch_size);
        Self { tau, batch_sizes, initial_proposal: None, em: EmConfig::default(), master_seed }
    }

    pub fn n_total(&self) -> usize {
        self.batch_sizes.iter().sum()
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.tau == 0 {
            return Err(Error::InvalidConfig("tau must be at least 1".into()));
        }
        if self.batch_sizes.len() != self.tau + 1 {
            return Err(Error::InvalidConfig(format!("expected {} batch sizes, got {}", self.tau + 1, self.batch_sizes.len())));
        }
        if self.batch_sizes.contains(&0) {
            return Err(Error::InvalidConfig("batch sizes must be positive".into()));
        }
        if let Some(init) = &self.initial_proposal {
            if init.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: init.dim() });
            }
        }
        self.em.validate()
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::new(DEFAULT_TAU, DEFAULT_BATCH_SIZE, DEFAULT_FINAL_BATCH_SIZE, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineResult {
    pub final_params: GmmParams,
    pub rho_hat_final: f64,
    /// One trace per iteration `t = 1..=tau`.
    pub traces: Vec<CicTrace>,
    pub store: BatchStore,
    pub k_history: Vec<usize>,
    pub master_seed: u64,
}

/// Thirty equally weighted components with standard-normal means and covariance `3I`.
pub fn default_initial_proposal<R: Rng + ?Sized>(p: usize, rng: &mut R) -> GmmParams {
    let means: Vec<Vec<f64>> = (0..INITIAL_COMPONENTS).map(|_| (0..p).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let cov = SpdMatrix::scaled_identity(p, 3.0).expect("3I is SPD");
    GmmParams::equal_weights(means, vec![cov; INITIAL_COMPONENTS]).expect("valid initial mixture")
}

/// Initial proposal for a run seeded by `seed`.
pub fn initial_proposal_for(config: &PipelineConfig, dim: usize, seed: StreamSeed) -> GmmParams {
    match &config.initial_proposal {
        Some(p) => p.clone(),
        None => default_initial_proposal(dim, &mut seed.derive(purpose::INITIAL_PROPOSAL).rng()),
    }
}

/// Runs the procedure with streams derived from `config.master_seed`.
pub fn run_cic_is(problem: &Problem, config: &PipelineConfig) -> Result<PipelineResult> {
    let seed = StreamSeed::new(config.master_seed);
    let init = initial_proposal_for(config, problem.dim(), seed);
    run_cic_is_seeded(problem, config, &init, seed)
}

/// For `t = 1..=tau`: sample batch `t - 1` from the current proposal, pick the
/// mixture order minimizing the criterion on all batches so far and adopt the
/// fitted mixture. Then draw the final batch and estimate `ρ` from batches
/// `1..=tau`.
pub fn run_cic_is_seeded(problem: &Problem, config: &PipelineConfig, initial: &GmmParams, seed: StreamSeed) -> Result<PipelineResult> {
    config.validate(problem.dim())?;
    if initial.dim() != problem.dim() {
        return Err(Error::DimensionMismatch { expected: problem.dim(), got: initial.dim() });
    }
    let tau = config.tau;
    let mut store = BatchStore::new(problem.dim());
    let mut proposal = initial.clone();
    let mut traces = Vec::with_capacity(tau);
    let mut k_history = Vec::with_capacity(tau);

    for t in 1..=tau {
        let mut rng = seed.derive_path(&[purpose::SAMPLE_BATCH, (t - 1) as u64]).rng();
        store.sample_batch(&proposal, config.batch_sizes[t - 1], &mut rng, |x| problem.log_r(x))?;
        if t == 1 && rho_estimate_batch(&store, 0) == 0.0 {
            return Err(Error::NoEffectiveSamples);
        }
        let rho_hat = rho_estimate_cumulative(&store, t)?;
        let k_min = k_min_schedule(t, k_history.last().copied());
        let trace = select_model_order(&store, 0..t, rho_hat, k_min, &config.em, seed.derive_path(&[purpose::GRID_SEARCH, t as u64]))?;
        proposal = trace.chosen_params.clone();
        k_history.push(trace.chosen_k);
        traces.push(trace);
    }

    let mut rng = seed.derive_path(&[purpose::SAMPLE_BATCH, tau as u64]).rng();
    store.sample_batch(&proposal, config.batch_sizes[tau], &mut rng, |x| problem.log_r(x))?;
    let rho_hat_final = rho_estimate_cumulative(&store, tau + 1)?;

    Ok(PipelineResult { final_params: proposal, rho_hat_final, traces, store, k_history, master_seed: seed.master() })
}

/// `[k, d, status, cbar, rho_hat, cic, chosen]`; NaN values become `null`.
pub type TraceRowJson = (usize, usize, String, Option<f64>, f64, Option<f64>, bool);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineDocument {
    pub seed: u64,
    pub rho_hat_final: f64,
    pub k_history: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    pub final_params: GmmDocument,
    pub stop_reasons: Vec<StopReason>,
    pub traces: Vec<Vec<TraceRowJson>>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl PipelineResult {
    pub fn to_document(&self) -> PipelineDocument {
        PipelineDocument {
            seed: self.master_seed,
            rho_hat_final: self.rho_hat_final,
            k_history: self.k_history.clone(),
            batch_sizes: self.store.batches().iter().map(|b| b.len()).collect(),
            final_params: self.final_params.to_document(),
            stop_reasons: self.traces.iter().map(|t| t.stop).collect(),
            traces: self
                .traces
                .iter()
                .map(|tr| {
                    tr.entries
                        .iter()
                        .map(|e| (e.k, e.d, e.status().to_string(), finite(e.cbar), e.rho_hat, finite(e.cic), e.k == tr.chosen_k))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("pipeline document serializes")
    }
}

//! Gaussian mixture parameters, density and sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{log_norm_const, log_sum_exp, mvn_logpdf_unchecked, mvn_sample, SpdMatrix};

/// Tolerance on `Σ α_j = 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Free parameter dimension of an unconstrained `p`-dimensional mixture with `k` components.
pub fn free_param_dimension(k: usize, p: usize) -> usize {
    assert!(k >= 1 && p >= 1, "k and p must be positive");
    (k - 1) + k * (p + p * (p + 1) / 2)
}

/// Immutable mixture parameters θ = (α, μ, Σ).
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    dim: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covs: Vec<SpdMatrix>,
    // ln α_j + normalizing constant of component j
    log_consts: Vec<f64>,
}

impl GmmParams {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covs: Vec<SpdMatrix>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::InvalidMixture("no components".into()));
        }
        if means.len() != k || covs.len() != k {
            return Err(Error::InvalidMixture(format!(
                "{k} weights but {} means and {} covariances",
                means.len(),
                covs.len()
            )));
        }
        let dim = covs[0].dim();
        for (m, c) in means.iter().zip(&covs) {
            if m.len() != dim || c.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: m.len().max(c.dim()) });
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidMixture("non-finite mean".into()));
            }
        }
        if let Some(j) = weights.iter().position(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(Error::InvalidMixture(format!("weight {j} is not positive")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidMixture(format!("weights sum to {total}")));
        }
        let log_consts = weights.iter().zip(&covs).map(|(a, c)| a.ln() + log_norm_const(c)).collect();
        Ok(Self { dim, weights, means, covs, log_consts })
    }

    /// Mixture of `k` equally weighted components.
    pub fn equal_weights(means: Vec<Vec<f64>>, covs: Vec<SpdMatrix>) -> Result<Self> {
        let k = means.len();
        Self::new(vec![1.0 / k as f64; k], means, covs)
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn covs(&self) -> &[SpdMatrix] {
        &self.covs
    }

    pub fn free_param_dimension(&self) -> usize {
        free_param_dimension(self.k(), self.dim)
    }

    /// Writes `ln α_j + ln q_j(x)` for every component into `out`.
    #[inline]
    pub(crate) fn component_log_terms(&self, x: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        if self.dim == 2 {
            let (x0, x1) = (x[0], x[1]);
            for (((o, m), c), lc) in out.iter_mut().zip(&self.means).zip(&self.covs).zip(&self.log_consts) {
                let l = c.chol();
                let z0 = (x0 - m[0]) / l[0];
                let z1 = (x1 - m[1] - l[2] * z0) / l[3];
                *o = lc - 0.5 * (z0 * z0 + z1 * z1);
            }
            return;
        }
        for j in 0..self.k() {
            let quad = self.covs[j].mahalanobis_sq(x, &self.means[j], scratch);
            out[j] = self.log_consts[j] - 0.5 * quad;
        }
    }

    /// `ln q(x; θ)`.
    pub fn logpdf(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        let mut scratch = vec![0.0; self.dim];
        let mut terms = vec![0.0; self.k()];
        self.component_log_terms(x, &mut scratch, &mut terms);
        Ok(log_sum_exp(&terms))
    }

    /// Log-density of a single component (without its weight).
    pub fn component_logpdf(&self, j: usize, x: &[f64]) -> f64 {
        let mut scratch = vec![0.0; self.dim];
        mvn_logpdf_unchecked(x, &self.means[j], &self.covs[j], &mut scratch)
    }

    /// Picks a component with probability `α_j`, then samples from it.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let j = self.sample_component(rng);
        mvn_sample(rng, &self.means[j], &self.covs[j])
    }

    pub fn sample_component<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (j, a) in self.weights.iter().enumerate() {
            acc += a;
            if u < acc {
                return j;
            }
        }
        self.k() - 1
    }

    pub fn to_document(&self) -> GmmDocument {
        GmmDocument {
            k: self.k(),
            p: self.dim,
            weights: self.weights.clone(),
            means: self.means.clone(),
            covs: self.covs.iter().map(SpdMatrix::rows).collect(),
        }
    }

    pub fn from_document(doc: &GmmDocument) -> Result<Self> {
        if doc.weights.len() != doc.k {
            return Err(Error::Parse(format!("k = {} but {} weights", doc.k, doc.weights.len())));
        }
        let covs = doc.covs.iter().map(|rows| SpdMatrix::from_rows(rows)).collect::<Result<Vec<_>>>()?;
        let params = Self::new(doc.weights.clone(), doc.means.clone(), covs)?;
        if params.dim != doc.p {
            return Err(Error::Parse(format!("p = {} but components have dimension {}", doc.p, params.dim)));
        }
        Ok(params)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_document()).expect("mixture document serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_document(&serde_json::from_str(s)?)
    }
}

/// JSON form of [`GmmParams`]; covariances are row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmDocument {
    pub k: usize,
    pub p: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covs: Vec<Vec<Vec<f64>>>,
}

//! Weighted EM minimizing the cumulative cross-entropy estimator for a fixed
//! number of mixture components.
//!
//! Each point enters the sums with its importance weight `w_i = r(x_i)/q(x_i)`
//! under the proposal that generated it. Zero-weight points add nothing to any
//! sum and are skipped; they only count towards the `Σ n_s` denominator.

use std::ops::Range;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{effective_support, pairwise_sum, BatchStore};
use crate::gmm::GmmParams;
use crate::math::{condition_number, min_eigenvalue, SpdMatrix};
use crate::rng::{purpose, StreamSeed};

/// Mixture weights below this after an update count as a vanished component.
pub const MIN_COMPONENT_WEIGHT: f64 = 1e-12;

/// Covariance eigenvalues at or below this fraction of the sample's mean
/// per-coordinate variance are treated as zero.
pub const VARIANCE_FLOOR: f64 = 1e-14;

/// Stopping and abort rules for the EM iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub max_sweeps: usize,
    /// Stop once `(C̄_prev - C̄_new)/|C̄_prev|` falls below this.
    pub rel_improvement_threshold: f64,
    /// Abort when any component covariance has a larger condition number.
    pub condition_abort: f64,
    pub n_restarts: usize,
    /// Number of aborted restarts that marks `k` as too large.
    pub abort_limit: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { max_sweeps: 10, rel_improvement_threshold: 0.01, condition_abort: 1e5, n_restarts: 10, abort_limit: 5 }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_sweeps == 0 || self.n_restarts == 0 || self.abort_limit == 0 {
            return Err(Error::InvalidConfig("EM counts must be positive".into()));
        }
        if !(self.rel_improvement_threshold > 0.0) || !(self.condition_abort > 0.0) {
            return Err(Error::InvalidConfig("EM thresholds must be positive".into()));
        }
        if self.abort_limit > self.n_restarts {
            return Err(Error::InvalidConfig("abort_limit exceeds n_restarts".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmStatus {
    Converged,
    MaxSweeps,
    Aborted,
}

impl EmStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            EmStatus::Converged => "converged",
            EmStatus::MaxSweeps => "max_sweeps",
            EmStatus::Aborted => "aborted",
        }
    }
}

/// Why an EM run was aborted.
#[derive(Debug, Clone, PartialEq)]
pub enum AbortReason {
    IllConditioned { component: usize, condition: f64 },
    Degenerate { component: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmOutcome {
    pub status: EmStatus,
    /// `None` when aborted.
    pub params: Option<GmmParams>,
    /// Cross-entropy estimate at `params`; NaN when aborted.
    pub objective: f64,
    pub sweeps_used: usize,
    pub abort_reason: Option<AbortReason>,
}

impl EmOutcome {
    fn aborted(sweeps_used: usize, reason: AbortReason) -> Self {
        Self { status: EmStatus::Aborted, params: None, objective: f64::NAN, sweeps_used, abort_reason: Some(reason) }
    }

    pub fn is_aborted(&self) -> bool {
        self.status == EmStatus::Aborted
    }
}

/// Positive-weight points of a batch range, packed for the EM loops.
#[derive(Debug, Clone)]
pub struct EffectiveSample {
    dim: usize,
    xs: Vec<f64>,
    weights: Vec<f64>,
    total_n: usize,
    variance_floor: f64,
}

impl EffectiveSample {
    pub fn from_store(store: &BatchStore, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > store.num_batches() {
            return Err(Error::EmptyRange);
        }
        let dim = store.dim();
        let mut xs = Vec::new();
        let mut weights = Vec::new();
        for p in store.points_in(range.clone()).filter(|p| p.is_effective()) {
            xs.extend_from_slice(&p.x);
            weights.push(p.weight);
        }
        let spread = sample_cov_trace(xs.chunks_exact(dim), dim) / dim as f64;
        Ok(Self { dim, xs, weights, total_n: store.total_count(range), variance_floor: VARIANCE_FLOOR * spread })
    }

    /// Number of positive-weight points.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn total_n(&self) -> usize {
        self.total_n
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `-(1/Σn_s) Σ w_i ln q_θ(x_i)`.
    pub fn objective(&self, theta: &GmmParams) -> f64 {
        let mut ws = Workspace::new(self.dim, theta.k(), 0);
        self.e_step(theta, &mut ws, false)
    }

    /// Computes responsibilities into `ws.gamma` (if `want_gamma`) and returns the objective at `theta`.
    fn e_step(&self, theta: &GmmParams, ws: &mut Workspace, want_gamma: bool) -> f64 {
        let k = theta.k();
        let n = self.len();
        if want_gamma {
            ws.gamma.resize(n * k, 0.0);
        }
        ws.terms.resize(n, 0.0);
        for i in 0..n {
            theta.component_log_terms(self.point(i), &mut ws.scratch, &mut ws.logs);
            let lse = normalize_log_terms(&mut ws.logs);
            if want_gamma {
                ws.gamma[i * k..(i + 1) * k].copy_from_slice(&ws.logs);
            }
            ws.terms[i] = self.weights[i] * lse;
        }
        if self.total_n == 0 {
            return 0.0;
        }
        -pairwise_sum(&ws.terms) / self.total_n as f64
    }

    /// Weighted masses, means and covariances per component from the
    /// responsibilities in `ws.gamma`. A component whose mass vanishes, whose
    /// covariance is not positive definite, or whose smallest eigenvalue is
    /// at rounding level for this sample yields `None`.
    fn component_updates(&self, k: usize, ws: &Workspace) -> (Vec<f64>, Vec<Option<(Vec<f64>, SpdMatrix)>>) {
        let p = self.dim;
        let gamma = &ws.gamma[..self.len() * k];
        let rows = || self.xs.chunks_exact(p).zip(&self.weights).zip(gamma.chunks_exact(k));
        let mut mass = vec![0.0; k];
        let mut sums = vec![0.0; k * p];
        for ((x, &w), g) in rows() {
            for ((m, s), &gj) in mass.iter_mut().zip(sums.chunks_exact_mut(p)).zip(g) {
                let wg = w * gj;
                *m += wg;
                for (sa, xa) in s.iter_mut().zip(x) {
                    *sa += wg * xa;
                }
            }
        }
        for (s, &m) in sums.chunks_exact_mut(p).zip(&mass) {
            if m > 0.0 {
                s.iter_mut().for_each(|v| *v /= m);
            }
        }
        let means: Vec<Vec<f64>> = sums.chunks_exact(p).map(<[f64]>::to_vec).collect();
        let mut flat = vec![0.0; k * p * p];
        if p == 2 {
            for ((x, &w), g) in rows() {
                for ((c, mu), &gj) in flat.chunks_exact_mut(4).zip(sums.chunks_exact(2)).zip(g) {
                    let wg = w * gj;
                    if wg == 0.0 {
                        continue;
                    }
                    let (d0, d1) = (x[0] - mu[0], x[1] - mu[1]);
                    let wa = wg * d0;
                    c[0] += wa * d0;
                    c[1] += wa * d1;
                    c[3] += wg * d1 * d1;
                }
            }
        } else {
            let mut d = vec![0.0; p];
            for ((x, &w), g) in rows() {
                for ((c, mu), &gj) in flat.chunks_exact_mut(p * p).zip(sums.chunks_exact(p)).zip(g) {
                    let wg = w * gj;
                    if wg == 0.0 {
                        continue;
                    }
                    for a in 0..p {
                        d[a] = x[a] - mu[a];
                    }
                    for a in 0..p {
                        let wa = wg * d[a];
                        for b in a..p {
                            c[a * p + b] += wa * d[b];
                        }
                    }
                }
            }
        }
        let covs: Vec<Vec<f64>> = flat.chunks_exact(p * p).map(<[f64]>::to_vec).collect();
        let updates = covs
            .into_iter()
            .zip(means)
            .zip(&mass)
            .map(|((mut c, mean), &m)| {
                if !(m > 0.0) {
                    return None;
                }
                for a in 0..p {
                    for b in a..p {
                        let v = c[a * p + b] / m;
                        c[a * p + b] = v;
                        c[b * p + a] = v;
                    }
                }
                let floor = self.variance_floor;
                spd_with_jitter(p, c).ok().filter(|cov| min_eigenvalue(cov) > floor).map(|cov| (mean, cov))
            })
            .collect();
        (mass, updates)
    }

    /// Closed-form update given the responsibilities in `ws.gamma`.
    fn m_step(&self, k: usize, ws: &Workspace) -> std::result::Result<GmmParams, AbortReason> {
        let (mass, updates) = self.component_updates(k, ws);
        let total_mass: f64 = mass.iter().sum();
        let mut means = Vec::with_capacity(k);
        let mut covs = Vec::with_capacity(k);
        for (j, u) in updates.into_iter().enumerate() {
            if !(mass[j] / total_mass >= MIN_COMPONENT_WEIGHT) {
                return Err(AbortReason::Degenerate { component: j });
            }
            let (mean, cov) = u.ok_or(AbortReason::Degenerate { component: j })?;
            means.push(mean);
            covs.push(cov);
        }
        let weights = mass.iter().map(|m| m / total_mass).collect();
        GmmParams::new(weights, means, covs).map_err(|_| AbortReason::Degenerate { component: 0 })
    }
}

/// Factors `c`; on failure adds `1e-12·trace/p` to the diagonal once and retries.
fn spd_with_jitter(p: usize, mut c: Vec<f64>) -> Result<SpdMatrix> {
    match SpdMatrix::new(p, c.clone()) {
        Ok(m) => Ok(m),
        Err(Error::NotPositiveDefinite) => {
            let trace: f64 = (0..p).map(|a| c[a * p + a]).sum();
            let jitter = 1e-12 * trace / p as f64;
            if !(jitter > 0.0) {
                return Err(Error::NotPositiveDefinite);
            }
            for a in 0..p {
                c[a * p + a] += jitter;
            }
            SpdMatrix::new(p, c)
        }
        Err(e) => Err(e),
    }
}

/// Replaces log terms by normalized probabilities; returns their log-sum-exp.
#[inline]
fn normalize_log_terms(logs: &mut [f64]) -> f64 {
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        // every component density underflowed; spread evenly
        let u = 1.0 / logs.len() as f64;
        logs.iter_mut().for_each(|v| *v = u);
        return max;
    }
    let mut sum = 0.0;
    for v in logs.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in logs.iter_mut() {
        *v /= sum;
    }
    max + sum.ln()
}

struct Workspace {
    scratch: Vec<f64>,
    logs: Vec<f64>,
    gamma: Vec<f64>,
    terms: Vec<f64>,
}

impl Workspace {
    fn new(dim: usize, k: usize, n: usize) -> Self {
        Self { scratch: vec![0.0; dim], logs: vec![0.0; k], gamma: Vec::with_capacity(n * k), terms: Vec::with_capacity(n) }
    }
}

/// Posterior component probabilities `γ_j` of `x` under `theta`.
pub fn responsibilities(theta: &GmmParams, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != theta.dim() {
        return Err(Error::DimensionMismatch { expected: theta.dim(), got: x.len() });
    }
    let mut scratch = vec![0.0; theta.dim()];
    let mut logs = vec![0.0; theta.k()];
    theta.component_log_terms(x, &mut scratch, &mut logs);
    normalize_log_terms(&mut logs);
    Ok(logs)
}

/// One EM update over all points of `range`.
pub fn em_sweep(store: &BatchStore, range: Range<usize>, theta: &GmmParams) -> Result<GmmParams> {
    let data = EffectiveSample::from_store(store, range)?;
    em_sweep_prepared(&data, theta)
}

pub fn em_sweep_prepared(data: &EffectiveSample, theta: &GmmParams) -> Result<GmmParams> {
    if data.is_empty() {
        return Err(Error::NoEffectiveSamples);
    }
    if theta.dim() != data.dim() {
        return Err(Error::DimensionMismatch { expected: data.dim(), got: theta.dim() });
    }
    let mut ws = Workspace::new(data.dim(), theta.k(), data.len());
    data.e_step(theta, &mut ws, true);
    data.m_step(theta.k(), &ws).map_err(|r| match r {
        AbortReason::Degenerate { component } | AbortReason::IllConditioned { component, .. } => {
            Error::DegenerateComponent(component)
        }
    })
}

/// One update in which a degenerate component (vanishing mass or a
/// covariance that is not positive definite) keeps its previous weight, mean
/// and covariance; weights are renormalized afterwards. Returns the new
/// mixture and the indices of the retained components.
pub fn em_sweep_retaining(data: &EffectiveSample, theta: &GmmParams) -> Result<(GmmParams, Vec<usize>)> {
    if data.is_empty() {
        return Err(Error::NoEffectiveSamples);
    }
    let k = theta.k();
    let mut ws = Workspace::new(data.dim(), k, data.len());
    data.e_step(theta, &mut ws, true);
    let (mass, updates) = data.component_updates(k, &ws);
    let total_mass: f64 = mass.iter().sum();
    let mut retained = Vec::new();
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    for (j, u) in updates.into_iter().enumerate() {
        let alpha = mass[j] / total_mass;
        match u {
            Some((mean, cov)) if alpha >= MIN_COMPONENT_WEIGHT => {
                weights.push(alpha);
                means.push(mean);
                covs.push(cov);
            }
            _ => {
                retained.push(j);
                weights.push(theta.weights()[j]);
                means.push(theta.means()[j].clone());
                covs.push(theta.covs()[j].clone());
            }
        }
    }
    let sum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= sum);
    Ok((GmmParams::new(weights, means, covs)?, retained))
}

/// Iterates EM sweeps from `init` until the relative reduction of the
/// objective drops below the threshold, the sweep budget runs out, or a
/// component degenerates.
pub fn em_fit(store: &BatchStore, range: Range<usize>, init: &GmmParams, config: &EmConfig) -> Result<EmOutcome> {
    let data = EffectiveSample::from_store(store, range)?;
    em_fit_prepared(&data, init, config)
}

pub fn em_fit_prepared(data: &EffectiveSample, init: &GmmParams, config: &EmConfig) -> Result<EmOutcome> {
    if data.is_empty() {
        return Err(Error::NoEffectiveSamples);
    }
    if init.dim() != data.dim() {
        return Err(Error::DimensionMismatch { expected: data.dim(), got: init.dim() });
    }
    let k = init.k();
    let mut ws = Workspace::new(data.dim(), k, data.len());
    let mut theta = init.clone();
    let mut prev = data.e_step(&theta, &mut ws, true);
    for sweep in 1..=config.max_sweeps {
        let next = match data.m_step(k, &ws) {
            Ok(t) => t,
            Err(reason) => return Ok(EmOutcome::aborted(sweep, reason)),
        };
        for (j, c) in next.covs().iter().enumerate() {
            let condition = condition_number(c);
            if !(condition <= config.condition_abort) {
                return Ok(EmOutcome::aborted(sweep, AbortReason::IllConditioned { component: j, condition }));
            }
        }
        let cur = data.e_step(&next, &mut ws, true);
        theta = next;
        let converged = if prev == 0.0 { true } else { (prev - cur) / prev.abs() < config.rel_improvement_threshold };
        if converged {
            return Ok(EmOutcome {
                status: EmStatus::Converged,
                params: Some(theta),
                objective: cur,
                sweeps_used: sweep,
                abort_reason: None,
            });
        }
        prev = cur;
    }
    Ok(EmOutcome {
        status: EmStatus::MaxSweeps,
        params: Some(theta),
        objective: prev,
        sweeps_used: config.max_sweeps,
        abort_reason: None,
    })
}

/// Candidate starting means and the shared initial covariance scale for a batch range.
#[derive(Debug, Clone)]
pub struct InitPool {
    dim: usize,
    positive: Vec<Vec<f64>>,
    zero: Vec<Vec<f64>>,
    cov_scale: f64,
}

impl InitPool {
    pub fn from_store(store: &BatchStore, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > store.num_batches() {
            return Err(Error::EmptyRange);
        }
        let dim = store.dim();
        let support = effective_support(store, range.clone());
        let positive: Vec<Vec<f64>> = support.positive.iter().map(|&i| store.point(i).x.clone()).collect();
        let zero: Vec<Vec<f64>> = support.zero.iter().map(|&i| store.point(i).x.clone()).collect();
        let trace = sample_cov_trace(store.points_in(range).map(|p| p.x.as_slice()), dim);
        Ok(Self { dim, positive, zero, cov_scale: 3.0 / dim as f64 * trace })
    }

    pub fn positive_count(&self) -> usize {
        self.positive.len()
    }

    /// `(3/p)·trace(sample covariance)` used for every initial covariance.
    pub fn cov_scale(&self) -> f64 {
        self.cov_scale
    }

    /// Random starting mixture: means drawn without replacement from the
    /// positive-weight points, topped up from the zero-weight points.
    pub fn draw<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<GmmParams> {
        let available = self.positive.len() + self.zero.len();
        if k == 0 || available < k {
            return Err(Error::InsufficientPoints { needed: k, available });
        }
        let from_pos = k.min(self.positive.len());
        let mut means: Vec<Vec<f64>> = index::sample(rng, self.positive.len(), from_pos)
            .into_iter()
            .map(|i| self.positive[i].clone())
            .collect();
        if from_pos < k {
            means.extend(index::sample(rng, self.zero.len(), k - from_pos).into_iter().map(|i| self.zero[i].clone()));
        }
        let cov = SpdMatrix::scaled_identity(self.dim, self.cov_scale).map_err(|_| Error::DegenerateComponent(0))?;
        GmmParams::equal_weights(means, vec![cov; k])
    }
}

fn sample_cov_trace<'a>(points: impl Iterator<Item = &'a [f64]>, dim: usize) -> f64 {
    let pts: Vec<&[f64]> = points.collect();
    let n = pts.len();
    if n < 2 {
        return 0.0;
    }
    (0..dim)
        .map(|a| {
            let col: Vec<f64> = pts.iter().map(|x| x[a]).collect();
            let mean = pairwise_sum(&col) / n as f64;
            let sq: Vec<f64> = col.iter().map(|v| (v - mean) * (v - mean)).collect();
            pairwise_sum(&sq) / (n - 1) as f64
        })
        .sum()
}

/// Random starting parameters for `k` components over the points of `range`.
pub fn initialize_params<R: Rng + ?Sized>(store: &BatchStore, range: Range<usize>, k: usize, rng: &mut R) -> Result<GmmParams> {
    InitPool::from_store(store, range)?.draw(k, rng)
}

/// Result of fitting one `k` from several random starts.
#[derive(Debug, Clone, PartialEq)]
pub enum MultistartOutcome {
    Selected { best: EmOutcome, best_restart: usize, restarts: Vec<EmOutcome> },
    TooManyAborts { restarts: Vec<EmOutcome> },
}

impl MultistartOutcome {
    pub fn restarts(&self) -> &[EmOutcome] {
        match self {
            MultistartOutcome::Selected { restarts, .. } | MultistartOutcome::TooManyAborts { restarts } => restarts,
        }
    }

    pub fn best(&self) -> Option<&EmOutcome> {
        match self {
            MultistartOutcome::Selected { best, .. } => Some(best),
            MultistartOutcome::TooManyAborts { .. } => None,
        }
    }

    pub fn aborted_count(&self) -> usize {
        self.restarts().iter().filter(|o| o.is_aborted()).count()
    }

    pub fn all_aborted(&self) -> bool {
        self.aborted_count() == self.restarts().len()
    }
}

/// Runs `config.n_restarts` EM fits from independent random starts and keeps
/// the one with the smallest objective (ties: lowest restart index).
pub fn em_fit_multistart(
    store: &BatchStore,
    range: Range<usize>,
    k: usize,
    config: &EmConfig,
    seed: StreamSeed,
) -> Result<MultistartOutcome> {
    let data = EffectiveSample::from_store(store, range.clone())?;
    let pool = InitPool::from_store(store, range)?;
    em_fit_multistart_prepared(&data, &pool, k, config, seed)
}

pub fn em_fit_multistart_prepared(
    data: &EffectiveSample,
    pool: &InitPool,
    k: usize,
    config: &EmConfig,
    seed: StreamSeed,
) -> Result<MultistartOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::NoEffectiveSamples);
    }
    let restarts = (0..config.n_restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = seed.derive_path(&[purpose::RESTART, r as u64]).rng();
            match pool.draw(k, &mut rng) {
                Ok(init) => em_fit_prepared(data, &init, config),
                Err(Error::DegenerateComponent(j)) => Ok(EmOutcome::aborted(0, AbortReason::Degenerate { component: j })),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let aborted = restarts.iter().filter(|o| o.is_aborted()).count();
    if aborted >= config.abort_limit {
        return Ok(MultistartOutcome::TooManyAborts { restarts });
    }
    let best_restart = restarts
        .iter()
        .enumerate()
        .filter(|(_, o)| !o.is_aborted())
        .min_by(|a, b| a.1.objective.total_cmp(&b.1.objective).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("fewer aborts than restarts");
    Ok(MultistartOutcome::Selected { best: restarts[best_restart].clone(), best_restart, restarts })
}

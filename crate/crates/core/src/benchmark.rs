//! Parabolic limit-state benchmark from structural reliability, the crude
//! Monte Carlo and fixed-order adaptive baselines, and the repetition harness.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{em_sweep_retaining, EffectiveSample};
use crate::error::{Error, Result};
use crate::estimators::{rho_estimate_batch, BatchStore};
use crate::gmm::GmmParams;
use crate::math::std_normal_sf;
use crate::pipeline::{initial_proposal_for, run_cic_is_seeded, PipelineConfig, Problem};
use crate::quadrature::integrate;
use crate::rng::{purpose, StreamSeed};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Failure region `{x : b - x₂ - κ(x₁ - e)² <= 0}` under a bivariate standard normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParabolicLimitState {
    pub b: f64,
    pub kappa: f64,
    pub e: f64,
}

impl ParabolicLimitState {
    pub fn new(b: f64) -> Self {
        Self { b, kappa: 0.1, e: 0.0 }
    }

    pub fn with_shape(b: f64, kappa: f64, e: f64) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(Error::InvalidConfig("kappa must be positive".into()));
        }
        Ok(Self { b, kappa, e })
    }

    pub fn g(&self, x: &[f64]) -> f64 {
        limit_state_g(self, x)
    }

    pub fn fails(&self, x: &[f64]) -> bool {
        self.g(x) <= 0.0
    }
}

pub fn limit_state_g(ls: &ParabolicLimitState, x: &[f64]) -> f64 {
    let d = x[0] - ls.e;
    ls.b - x[1] - ls.kappa * d * d
}

/// `r(x) = φ₂(x)·𝟙(g(x) <= 0)`.
pub fn make_problem(ls: &ParabolicLimitState) -> Problem {
    let ls = *ls;
    Problem::new(2, format!("parabolic b={} kappa={} e={}", ls.b, ls.kappa, ls.e), move |x| {
        if ls.fails(x) {
            -LN_2PI - 0.5 * (x[0] * x[0] + x[1] * x[1])
        } else {
            f64::NEG_INFINITY
        }
    })
}

/// Failure probability by 1-D quadrature over `x₁ ∈ [-10, 10]` of `φ(x₁)·(1 - Φ(b - κ(x₁ - e)²))`.
pub fn true_rho_oracle(ls: &ParabolicLimitState) -> f64 {
    integrate(
        |x1| {
            let d = x1 - ls.e;
            (-0.5 * x1 * x1 - 0.5 * LN_2PI).exp() * std_normal_sf(ls.b - ls.kappa * d * d)
        },
        -10.0,
        10.0,
        1e-12,
    )
}

/// Fraction of `n` standard-normal draws that fail.
pub fn run_cmc<R: Rng + ?Sized>(ls: &ParabolicLimitState, n: usize, rng: &mut R) -> f64 {
    assert!(n >= 1);
    let hits = (0..n)
        .filter(|_| {
            let x = [rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)];
            ls.fails(&x)
        })
        .count();
    hits as f64 / n as f64
}

/// Fixed-order adaptive baseline: one weighted EM update per iteration on the
/// newest batch only, and `ρ` estimated from the final batch alone. The number
/// of components is that of the initial proposal.
pub fn run_ce_ais_gm(problem: &Problem, config: &PipelineConfig, initial: &GmmParams, seed: StreamSeed) -> Result<f64> {
    config.validate(problem.dim())?;
    let mut store = BatchStore::new(problem.dim());
    let mut proposal = initial.clone();
    for t in 1..=config.tau {
        let mut rng = seed.derive_path(&[purpose::SAMPLE_BATCH, (t - 1) as u64]).rng();
        store.sample_batch(&proposal, config.batch_sizes[t - 1], &mut rng, |x| problem.log_r(x))?;
        let data = EffectiveSample::from_store(&store, t - 1..t)?;
        if data.is_empty() {
            continue;
        }
        proposal = em_sweep_retaining(&data, &proposal)?.0;
    }
    let mut rng = seed.derive_path(&[purpose::SAMPLE_BATCH, config.tau as u64]).rng();
    store.sample_batch(&proposal, config.batch_sizes[config.tau], &mut rng, |x| problem.log_r(x))?;
    Ok(rho_estimate_batch(&store, config.tau))
}

/// `n_total / n_CMC` with `n_CMC = ρ̄(1 - ρ̄)/se²`.
pub fn cmc_ratio(rho_bar: f64, se: f64, n_total: usize) -> f64 {
    n_total as f64 * se * se / (rho_bar * (1.0 - rho_bar))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "cic-is")]
    CicIs,
    #[serde(rename = "ce-ais-gm")]
    CeAisGm,
    /// Analytic crude Monte Carlo standard error at the same budget; not simulated.
    #[serde(rename = "cmc-analytic")]
    CmcAnalytic,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::CicIs => "cic-is",
            Method::CeAisGm => "ce-ais-gm",
            Method::CmcAnalytic => "cmc-analytic",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cic-is" => Ok(Method::CicIs),
            "ce-ais-gm" => Ok(Method::CeAisGm),
            "cmc-analytic" => Ok(Method::CmcAnalytic),
            other => Err(Error::Parse(format!("unknown method {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub method: Method,
    pub mean: f64,
    pub std_error: f64,
    pub cmc_ratio: f64,
    pub repetitions: usize,
    pub n_total: usize,
}

/// Per-repetition output of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodRuns {
    pub method: Method,
    /// `Err` holds the failing error's name.
    pub estimates: Vec<std::result::Result<f64, String>>,
    /// Chosen `k` per iteration, CIC-IS only.
    pub k_histories: Vec<Option<Vec<usize>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub ls: ParabolicLimitState,
    pub runs: Vec<MethodRuns>,
    pub summaries: Vec<ExperimentSummary>,
}

/// Sample mean and standard error (sample sd / √n) of `values`, summed in sorted order.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let mut sq: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    sq.sort_by(f64::total_cmp);
    let var = sq.iter().sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn summarize(runs: &MethodRuns, repetitions: usize) -> Result<(f64, f64)> {
    let ok: Vec<f64> = runs.estimates.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    let failed = repetitions - ok.len();
    if (ok.len() as f64) < 0.95 * repetitions as f64 || ok.len() < 2 {
        return Err(Error::TooManyFailures { failed, total: repetitions });
    }
    Ok(mean_and_se(&ok))
}

/// Runs every method `repetitions` times with disjoint seeds and summarizes.
///
/// Within repetition `r` all methods start from the same random initial
/// proposal. A summary needs at least 95% successful repetitions.
pub fn run_experiment(
    ls: &ParabolicLimitState,
    methods: &[Method],
    repetitions: usize,
    base_seed: u64,
    config: &PipelineConfig,
) -> Result<ExperimentReport> {
    if repetitions < 2 {
        return Err(Error::InvalidConfig("at least 2 repetitions required".into()));
    }
    let problem = make_problem(ls);
    config.validate(problem.dim())?;
    let n_total = config.n_total();
    let simulated: Vec<Method> = methods.iter().copied().filter(|m| *m != Method::CmcAnalytic).collect();

    type Rep = Vec<(std::result::Result<f64, String>, Option<Vec<usize>>)>;
    let per_rep: Vec<Rep> = (0..repetitions)
        .into_par_iter()
        .map(|r| {
            let seed = StreamSeed::new(base_seed).derive_path(&[purpose::REPETITION, r as u64]);
            let init = initial_proposal_for(config, problem.dim(), seed);
            simulated
                .iter()
                .map(|m| match m {
                    Method::CicIs => match run_cic_is_seeded(&problem, config, &init, seed.derive(purpose::CIC_IS)) {
                        Ok(res) => (Ok(res.rho_hat_final), Some(res.k_history)),
                        Err(e) => (Err(e.name().to_string()), None),
                    },
                    Method::CeAisGm => {
                        (run_ce_ais_gm(&problem, config, &init, seed.derive(purpose::CE_AIS_GM)).map_err(|e| e.name().to_string()), None)
                    }
                    Method::CmcAnalytic => unreachable!(),
                })
                .collect()
        })
        .collect();

    let runs: Vec<MethodRuns> = simulated
        .iter()
        .enumerate()
        .map(|(i, &method)| MethodRuns {
            method,
            estimates: per_rep.iter().map(|rep| rep[i].0.clone()).collect(),
            k_histories: per_rep.iter().map(|rep| rep[i].1.clone()).collect(),
        })
        .collect();

    let mut stats = Vec::new();
    for r in &runs {
        stats.push((r.method, summarize(r, repetitions)?));
    }
    let reference_mean = stats.iter().find(|(m, _)| *m == Method::CicIs).map(|(_, s)| s.0);

    let mut summaries = Vec::new();
    for &method in methods {
        let summary = if method == Method::CmcAnalytic {
            let rho_bar = reference_mean.unwrap_or_else(|| true_rho_oracle(ls));
            let se = (rho_bar * (1.0 - rho_bar) / n_total as f64).sqrt();
            ExperimentSummary { method, mean: rho_bar, std_error: se, cmc_ratio: cmc_ratio(rho_bar, se, n_total), repetitions, n_total }
        } else {
            let (mean, se) = stats.iter().find(|(m, _)| *m == method).expect("simulated method").1;
            let rho_bar = reference_mean.unwrap_or(mean);
            ExperimentSummary { method, mean, std_error: se, cmc_ratio: cmc_ratio(rho_bar, se, n_total), repetitions, n_total }
        };
        summaries.push(summary);
    }
    Ok(ExperimentReport { ls: *ls, runs, summaries })
}

impl ExperimentReport {
    pub fn summary(&self, method: Method) -> Option<&ExperimentSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    pub fn method_runs(&self, method: Method) -> Option<&MethodRuns> {
        self.runs.iter().find(|r| r.method == method)
    }
}

/// One row of the results table CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub b: f64,
    pub method: Method,
    pub mean: f64,
    pub std_error: f64,
    pub cmc_ratio: f64,
    pub repetitions: usize,
    pub n_total: usize,
}

impl SummaryRow {
    pub fn new(b: f64, s: &ExperimentSummary) -> Self {
        Self { b, method: s.method, mean: s.mean, std_error: s.std_error, cmc_ratio: s.cmc_ratio, repetitions: s.repetitions, n_total: s.n_total }
    }

    pub fn summary(&self) -> ExperimentSummary {
        ExperimentSummary {
            method: self.method,
            mean: self.mean,
            std_error: self.std_error,
            cmc_ratio: self.cmc_ratio,
            repetitions: self.repetitions,
            n_total: self.n_total,
        }
    }
}

/// Writes `b,method,mean,std_error,cmc_ratio,repetitions,n_total`, preceded by `#` comment lines.
pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], comments: &[String], mut out: W) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a CSV written by [`write_summary_csv`], skipping comment lines.
pub fn read_summary_csv<R: Read>(input: R) -> Result<Vec<SummaryRow>> {
    csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input).deserialize().map(|r| r.map_err(Error::from)).collect()
}

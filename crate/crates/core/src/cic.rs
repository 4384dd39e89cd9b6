//! Cross-entropy information criterion and the grid search over mixture order.

use std::io::{Read, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::em::{em_fit_multistart_prepared, EffectiveSample, EmConfig, InitPool, MultistartOutcome};
use crate::error::{Error, Result};
use crate::estimators::BatchStore;
use crate::gmm::{free_param_dimension, GmmParams};
use crate::rng::{purpose, StreamSeed};

/// Window of the moving average that stops the grid search.
pub const MA_WINDOW: usize = 4;

/// Absolute upper bound on the number of components tried.
pub const ABSOLUTE_K_CAP: usize = 50;

/// `cbar + rho_hat · d / total_n`.
pub fn cic_value(cbar: f64, rho_hat: f64, d: usize, total_n: usize) -> f64 {
    assert!(total_n >= 1, "total_n must be positive");
    cbar + rho_hat * d as f64 / total_n as f64
}

/// Largest `k` the grid may reach: one component per `p + 1` effective points, at most 50.
pub fn k_cap(n_effective: usize, p: usize) -> usize {
    (n_effective / (p + 1)).clamp(1, ABSOLUTE_K_CAP)
}

/// First `k` of the grid at iteration `t`, given the order chosen at `t - 1`.
pub fn k_min_schedule(t: usize, previous_k: Option<usize>) -> usize {
    match (t, previous_k) {
        (0 | 1, _) | (_, None) => 1,
        (_, Some(k)) => k.saturating_sub(3).max(1),
    }
}

/// Tracks the moving average of the last [`MA_WINDOW`] criterion values and
/// reports when it first increases.
#[derive(Debug, Clone, Default)]
pub struct MovingAverageStop {
    values: Vec<f64>,
}

impl MovingAverageStop {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a value; true once the newest window average exceeds the previous one.
    pub fn push(&mut self, v: f64) -> bool {
        self.values.push(v);
        let n = self.values.len();
        if n <= MA_WINDOW {
            return false;
        }
        let avg = |w: &[f64]| w.iter().sum::<f64>() / MA_WINDOW as f64;
        avg(&self.values[n - MA_WINDOW..]) > avg(&self.values[n - 1 - MA_WINDOW..n - 1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MovingAverage,
    TooManyAborts,
    KCap,
}

/// One grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct CicEntry {
    pub k: usize,
    pub d: usize,
    pub outcome: MultistartOutcome,
    /// NaN for a `TooManyAborts` entry.
    pub cbar: f64,
    pub rho_hat: f64,
    /// NaN for a `TooManyAborts` entry.
    pub cic: f64,
}

impl CicEntry {
    pub fn is_completed(&self) -> bool {
        self.outcome.best().is_some()
    }

    pub fn status(&self) -> &'static str {
        match self.outcome.best() {
            Some(o) => o.status.as_str(),
            None => "too_many_aborts",
        }
    }
}

/// Record of one grid search.
#[derive(Debug, Clone, PartialEq)]
pub struct CicTrace {
    /// Ordered by `k`.
    pub entries: Vec<CicEntry>,
    pub chosen_k: usize,
    pub chosen_params: GmmParams,
    pub k_min: usize,
    pub stop: StopReason,
    pub total_n: usize,
}

impl CicTrace {
    pub fn chosen_entry(&self) -> &CicEntry {
        self.entries.iter().find(|e| e.k == self.chosen_k).expect("chosen entry present")
    }
}

/// Grid search over `k = k_min, k_min + 1, ...` on the batches in `range`.
///
/// Each `k` is fitted by multistart EM and scored by its criterion value.
/// The search stops when the moving average of the criterion increases, when
/// a `k` aborts too often, or at [`k_cap`]. If the first `k` already aborts
/// too often, `k_min` is lowered by one and the search restarts.
pub fn select_model_order(
    store: &BatchStore,
    range: Range<usize>,
    rho_hat: f64,
    k_min: usize,
    config: &EmConfig,
    seed: StreamSeed,
) -> Result<CicTrace> {
    if k_min == 0 {
        return Err(Error::InvalidConfig("k_min must be at least 1".into()));
    }
    let data = EffectiveSample::from_store(store, range.clone())?;
    if data.is_empty() {
        return Err(Error::NoEffectiveSamples);
    }
    let pool = InitPool::from_store(store, range)?;
    let p = store.dim();
    let cap = k_cap(data.len(), p);
    let total_n = data.total_n();
    let mut k_start = k_min.min(cap);
    let mut entries: Vec<CicEntry> = Vec::new();
    let grid_seed = seed.derive(purpose::GRID_SEARCH);

    let stop = 'search: loop {
        let mut ma = MovingAverageStop::new();
        let mut completed = 0usize;
        let mut k = k_start;
        loop {
            let outcome = em_fit_multistart_prepared(&data, &pool, k, config, grid_seed.derive(k as u64))?;
            let d = free_param_dimension(k, p);
            match outcome.best().map(|b| b.objective) {
                None => {
                    entries.push(CicEntry { k, d, outcome, cbar: f64::NAN, rho_hat, cic: f64::NAN });
                    if completed > 0 {
                        break 'search StopReason::TooManyAborts;
                    }
                    if k_start == 1 {
                        let aborted = entries.last().map(|e| e.outcome.aborted_count()).unwrap_or(0);
                        return Err(Error::TooManyAborts { k, aborted, restarts: config.n_restarts });
                    }
                    // the retried grid passes this k again with the same stream
                    entries.clear();
                    k_start -= 1;
                    continue 'search;
                }
                Some(cbar) => {
                    let cic = cic_value(cbar, rho_hat, d, total_n);
                    entries.push(CicEntry { k, d, outcome, cbar, rho_hat, cic });
                    completed += 1;
                    if ma.push(cic) {
                        break 'search StopReason::MovingAverage;
                    }
                }
            }
            if k >= cap {
                break 'search StopReason::KCap;
            }
            k += 1;
        }
    };

    entries.sort_by_key(|e| e.k);
    let chosen = entries
        .iter()
        .filter(|e| e.is_completed())
        .fold(None::<&CicEntry>, |best, e| match best {
            Some(b) if b.cic <= e.cic => Some(b),
            _ => Some(e),
        })
        .expect("at least one completed entry");
    let chosen_k = chosen.k;
    let chosen_params = chosen.outcome.best().and_then(|o| o.params.clone()).expect("completed entry has params");
    Ok(CicTrace { entries, chosen_k, chosen_params, k_min: k_start, stop, total_n })
}

/// One row of the trace CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CicCsvRow {
    pub t: usize,
    pub k: usize,
    pub d: usize,
    pub status: String,
    pub cbar: f64,
    pub rho_hat: f64,
    pub cic: f64,
    pub chosen: u8,
}

pub fn trace_rows(t: usize, trace: &CicTrace) -> Vec<CicCsvRow> {
    trace
        .entries
        .iter()
        .map(|e| CicCsvRow {
            t,
            k: e.k,
            d: e.d,
            status: e.status().to_string(),
            cbar: e.cbar,
            rho_hat: e.rho_hat,
            cic: e.cic,
            chosen: u8::from(e.k == trace.chosen_k),
        })
        .collect()
}

/// Writes traces (numbered from `t = 1`) as CSV: `t,k,d,status,cbar,rho_hat,cic,chosen`.
pub fn write_traces_csv<W: Write>(traces: &[CicTrace], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    for (i, trace) in traces.iter().enumerate() {
        for row in trace_rows(i + 1, trace) {
            w.serialize(row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_traces_csv<R: Read>(input: R) -> Result<Vec<CicCsvRow>> {
    csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input).deserialize().map(|r| r.map_err(Error::from)).collect()
}

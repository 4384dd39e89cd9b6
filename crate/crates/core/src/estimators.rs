//! Weighted-sample storage and the cross-entropy / normalizing-constant estimators.
//!
//! A [`BatchStore`] holds every evaluation of the target made during a run,
//! grouped by the proposal that generated it. Zero-weight points are kept:
//! batch sizes appear in the estimator denominators.

use std::io::{Read, Write};
use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gmm::GmmParams;

/// A sampled point with its target value and importance weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPoint {
    pub x: Vec<f64>,
    pub r_value: f64,
    pub log_proposal: f64,
    pub weight: f64,
}

impl WeightedPoint {
    /// Builds a point from `ln r(x)` (may be `-∞`) and `ln q(x)` under its proposal.
    pub fn from_logs(x: Vec<f64>, log_r: f64, log_proposal: f64) -> Self {
        if log_r == f64::NEG_INFINITY {
            return Self { x, r_value: 0.0, log_proposal, weight: 0.0 };
        }
        Self { x, r_value: log_r.exp(), log_proposal, weight: (log_r - log_proposal).exp() }
    }

    pub fn is_effective(&self) -> bool {
        self.weight > 0.0
    }
}

/// Points drawn from one proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub proposal: GmmParams,
    pub points: Vec<WeightedPoint>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Append-only list of batches.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStore {
    dim: usize,
    batches: Vec<Batch>,
}

/// Location of a point: (batch index, index within batch).
pub type PointIndex = (usize, usize);

/// Positive- and zero-weight points of a range, each in storage order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Support {
    pub positive: Vec<PointIndex>,
    pub zero: Vec<PointIndex>,
}

impl BatchStore {
    pub fn new(dim: usize) -> Self {
        Self { dim, batches: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn batches(&self) -> &[Batch] {
        &self.batches
    }

    pub fn batch(&self, s: usize) -> &Batch {
        &self.batches[s]
    }

    pub fn num_batches(&self) -> usize {
        self.batches.len()
    }

    pub fn point(&self, idx: PointIndex) -> &WeightedPoint {
        &self.batches[idx.0].points[idx.1]
    }

    /// Appends a batch whose points were weighted against `proposal`.
    pub fn push_batch(&mut self, proposal: GmmParams, points: Vec<WeightedPoint>) -> Result<()> {
        if proposal.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: proposal.dim() });
        }
        if let Some(p) = points.iter().find(|p| p.x.len() != self.dim) {
            return Err(Error::DimensionMismatch { expected: self.dim, got: p.x.len() });
        }
        self.batches.push(Batch { proposal, points });
        Ok(())
    }

    /// Draws `n` points from `proposal`, evaluates `log_r` once per point and appends the batch.
    pub fn sample_batch<R, F>(&mut self, proposal: &GmmParams, n: usize, rng: &mut R, log_r: F) -> Result<()>
    where
        R: Rng + ?Sized,
        F: Fn(&[f64]) -> f64,
    {
        let points = (0..n)
            .map(|_| {
                let x = proposal.sample(rng);
                let lq = proposal.logpdf(&x)?;
                let lr = log_r(&x);
                Ok(WeightedPoint::from_logs(x, lr, lq))
            })
            .collect::<Result<Vec<_>>>()?;
        self.push_batch(proposal.clone(), points)
    }

    /// `Σ n_s` over the range.
    pub fn total_count(&self, range: Range<usize>) -> usize {
        self.batches[range].iter().map(Batch::len).sum()
    }

    pub fn points_in(&self, range: Range<usize>) -> impl Iterator<Item = &WeightedPoint> {
        self.batches[range].iter().flat_map(|b| b.points.iter())
    }

    fn check_range(&self, range: &Range<usize>) -> Result<()> {
        if range.start >= range.end || range.end > self.batches.len() {
            return Err(Error::EmptyRange);
        }
        Ok(())
    }
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Cumulative cross-entropy estimator over the batches in `range`:
/// `-(1/Σn_s) Σ_s Σ_i w_i ln q_θ(x_i)`.
pub fn cross_entropy_estimate(store: &BatchStore, theta: &GmmParams, range: Range<usize>) -> Result<f64> {
    store.check_range(&range)?;
    if theta.dim() != store.dim() {
        return Err(Error::DimensionMismatch { expected: store.dim(), got: theta.dim() });
    }
    let n = store.total_count(range.clone());
    if n == 0 {
        return Err(Error::EmptyRange);
    }
    let terms = store
        .points_in(range)
        .filter(|p| p.is_effective())
        .map(|p| theta.logpdf(&p.x).map(|l| p.weight * l))
        .collect::<Result<Vec<_>>>()?;
    Ok(-pairwise_sum(&terms) / n as f64)
}

/// Mean importance weight of batch `s`.
pub fn rho_estimate_batch(store: &BatchStore, s: usize) -> f64 {
    let b = store.batch(s);
    if b.is_empty() {
        return 0.0;
    }
    let w: Vec<f64> = b.points.iter().map(|p| p.weight).collect();
    pairwise_sum(&w) / b.len() as f64
}

/// Normalizing-constant estimate available at iteration `t`: batch 0 alone for
/// `t = 1`, otherwise the pooled mean weight of batches `1..t` (batch 0 excluded).
pub fn rho_estimate_cumulative(store: &BatchStore, t: usize) -> Result<f64> {
    if t == 0 || t > store.num_batches() {
        return Err(Error::EmptyRange);
    }
    if t == 1 {
        return Ok(rho_estimate_batch(store, 0));
    }
    let w: Vec<f64> = store.points_in(1..t).map(|p| p.weight).collect();
    if w.is_empty() {
        return Err(Error::EmptyRange);
    }
    Ok(pairwise_sum(&w) / w.len() as f64)
}

/// Splits the points of `range` into positive- and zero-weight index sets.
pub fn effective_support(store: &BatchStore, range: Range<usize>) -> Support {
    let mut support = Support::default();
    for s in range {
        for (i, p) in store.batch(s).points.iter().enumerate() {
            if p.is_effective() {
                support.positive.push((s, i));
            } else {
                support.zero.push((s, i));
            }
        }
    }
    support
}

/// Writes batch `s` as CSV: `x_1..x_p, r_value, log_proposal, weight`.
pub fn write_batch_csv<W: Write>(store: &BatchStore, s: usize, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let mut header: Vec<String> = (1..=store.dim()).map(|i| format!("x_{i}")).collect();
    header.extend(["r_value", "log_proposal", "weight"].map(String::from));
    w.write_record(&header)?;
    for p in &store.batch(s).points {
        let mut rec: Vec<String> = p.x.iter().map(|v| v.to_string()).collect();
        rec.extend([p.r_value, p.log_proposal, p.weight].map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a CSV written by [`write_batch_csv`].
pub fn read_batch_csv<R: Read>(input: R) -> Result<Vec<WeightedPoint>> {
    let mut rdr = csv::Reader::from_reader(input);
    let cols = rdr.headers()?.len();
    if cols < 4 {
        return Err(Error::Parse("batch CSV needs at least 4 columns".into()));
    }
    let p = cols - 3;
    let mut points = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| Error::Parse(format!("{f}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        points.push(WeightedPoint { x: vals[..p].to_vec(), r_value: vals[p], log_proposal: vals[p + 1], weight: vals[p + 2] });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::SpdMatrix;

    fn std_proposal(p: usize) -> GmmParams {
        GmmParams::new(vec![1.0], vec![vec![0.0; p]], vec![SpdMatrix::identity(p)]).unwrap()
    }

    fn point(x: Vec<f64>, weight: f64) -> WeightedPoint {
        WeightedPoint { x, r_value: weight, log_proposal: 0.0, weight }
    }

    #[test]
    fn weight_from_logs() {
        let p = WeightedPoint::from_logs(vec![0.0], f64::NEG_INFINITY, -1.0);
        assert_eq!((p.r_value, p.weight), (0.0, 0.0));
        let p = WeightedPoint::from_logs(vec![0.0], -800.0, -801.0);
        assert_eq!(p.r_value, 0.0); // underflows in linear domain
        assert!((p.weight - 1f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn all_zero_weights() {
        let mut store = BatchStore::new(1);
        store.push_batch(std_proposal(1), vec![point(vec![0.3], 0.0), point(vec![-2.0], 0.0)]).unwrap();
        assert_eq!(cross_entropy_estimate(&store, &std_proposal(1), 0..1).unwrap(), 0.0);
        assert_eq!(rho_estimate_batch(&store, 0), 0.0);
        assert!(effective_support(&store, 0..1).positive.is_empty());
    }

    #[test]
    fn single_point() {
        let mut store = BatchStore::new(1);
        store.push_batch(std_proposal(1), vec![point(vec![0.7], 2.5)]).unwrap();
        let theta = std_proposal(1);
        let l = theta.logpdf(&[0.7]).unwrap();
        assert_eq!(cross_entropy_estimate(&store, &theta, 0..1).unwrap(), -2.5 * l);
    }

    #[test]
    fn batch_mean() {
        let mut store = BatchStore::new(1);
        store.push_batch(std_proposal(1), [1.0, 2.0, 3.0].map(|w| point(vec![0.0], w)).to_vec()).unwrap();
        assert_eq!(rho_estimate_batch(&store, 0), 2.0);
    }

    #[test]
    fn cumulative_pools_later_batches() {
        let mut store = BatchStore::new(1);
        for ws in [[10.0, 10.0], [1.0, 3.0], [5.0, 7.0]] {
            store.push_batch(std_proposal(1), ws.map(|w| point(vec![0.0], w)).to_vec()).unwrap();
        }
        assert_eq!(rho_estimate_cumulative(&store, 1).unwrap(), rho_estimate_batch(&store, 0));
        assert_eq!(rho_estimate_cumulative(&store, 3).unwrap(), (2.0 + 6.0) / 2.0);
        assert!(rho_estimate_cumulative(&store, 0).is_err());
        assert!(rho_estimate_cumulative(&store, 4).is_err());
    }

    #[test]
    fn empty_range_rejected() {
        let mut store = BatchStore::new(1);
        store.push_batch(std_proposal(1), vec![point(vec![0.0], 1.0)]).unwrap();
        assert_eq!(cross_entropy_estimate(&store, &std_proposal(1), 0..0), Err(Error::EmptyRange));
        assert_eq!(cross_entropy_estimate(&store, &std_proposal(1), 0..2), Err(Error::EmptyRange));
    }

    #[test]
    fn support_partition_stable() {
        let mut store = BatchStore::new(1);
        store.push_batch(std_proposal(1), [0.0, 1.0, 0.0].map(|w| point(vec![0.0], w)).to_vec()).unwrap();
        store.push_batch(std_proposal(1), [2.0, 0.0].map(|w| point(vec![0.0], w)).to_vec()).unwrap();
        let s = effective_support(&store, 0..2);
        assert_eq!(s.positive, vec![(0, 1), (1, 0)]);
        assert_eq!(s.zero, vec![(0, 0), (0, 2), (1, 1)]);
    }

    #[test]
    fn pairwise_matches_naive_on_exact_values() {
        let v: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 500_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let mut store = BatchStore::new(2);
        let pts = vec![
            WeightedPoint::from_logs(vec![0.1, -3.25], -2.0, -1.7),
            WeightedPoint::from_logs(vec![1e-300, 7.0], f64::NEG_INFINITY, -30.0),
        ];
        store.push_batch(std_proposal(2), pts.clone()).unwrap();
        let mut buf = Vec::new();
        write_batch_csv(&store, 0, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x_1,x_2,r_value,log_proposal,weight\n"));
        assert!(!text.contains('\r'));
        assert_eq!(read_batch_csv(&buf[..]).unwrap(), pts);
    }
}

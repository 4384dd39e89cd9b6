//! Dense multivariate-Gaussian primitives for small dimensions.
//!
//! Matrices are stored row-major in flat `Vec<f64>`s. Dimensions in this crate
//! are small (p <= 20), so hand-rolled Cholesky and triangular solves beat a
//! general linear-algebra dependency in the EM hot loop.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Absolute tolerance for the symmetry check on construction.
pub const SYMMETRY_TOL: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Symmetric positive-definite matrix with its cached lower Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    dim: usize,
    entries: Vec<f64>,
    chol: Vec<f64>,
    half_log_det: f64,
}

impl SpdMatrix {
    /// Symmetrizes `entries` (row-major, `dim * dim`) and factors it.
    pub fn new(dim: usize, mut entries: Vec<f64>) -> Result<Self> {
        if dim == 0 || entries.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, got: entries.len() });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        let mut asym = 0.0f64;
        for i in 0..dim {
            for j in (i + 1)..dim {
                let a = entries[i * dim + j];
                let b = entries[j * dim + i];
                asym = asym.max((a - b).abs());
                let m = 0.5 * (a + b);
                entries[i * dim + j] = m;
                entries[j * dim + i] = m;
            }
        }
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric(asym));
        }
        let chol = cholesky_lower(dim, &entries)?;
        let half_log_det = (0..dim).map(|i| chol[i * dim + i].ln()).sum();
        Ok(Self { dim, entries, chol, half_log_det })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut entries = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: row.len() });
            }
            entries.extend_from_slice(row);
        }
        Self::new(dim, entries)
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0).expect("identity is SPD")
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Result<Self> {
        let mut entries = vec![0.0; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = scale;
        }
        Self::new(dim, entries)
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        let dim = diag.len();
        let mut entries = vec![0.0; dim * dim];
        for (i, &d) in diag.iter().enumerate() {
            entries[i * dim + i] = d;
        }
        Self::new(dim, entries)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major entries.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    /// Row-major lower Cholesky factor `L` with `L Lᵀ = self`.
    pub fn chol(&self) -> &[f64] {
        &self.chol
    }

    /// `Σ log L_ii`, i.e. half the log-determinant.
    pub fn half_log_det(&self) -> f64 {
        self.half_log_det
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.entries[i * self.dim + i]).sum()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.dim).map(|r| r.to_vec()).collect()
    }

    /// Overwrites `v` with `L⁻¹ v` by forward substitution.
    #[inline]
    pub fn solve_lower_in_place(&self, v: &mut [f64]) {
        let p = self.dim;
        for i in 0..p {
            let row = &self.chol[i * p..i * p + i + 1];
            let mut s = v[i];
            for j in 0..i {
                s -= row[j] * v[j];
            }
            v[i] = s / row[i];
        }
    }

    /// `(x - mean)ᵀ self⁻¹ (x - mean)` using `scratch` (length `dim`) as workspace.
    #[inline]
    pub fn mahalanobis_sq(&self, x: &[f64], mean: &[f64], scratch: &mut [f64]) -> f64 {
        for ((s, xi), mi) in scratch.iter_mut().zip(x).zip(mean) {
            *s = xi - mi;
        }
        self.solve_lower_in_place(scratch);
        scratch.iter().map(|v| v * v).sum()
    }
}

fn cholesky_lower(p: usize, a: &[f64]) -> Result<Vec<f64>> {
    let mut l = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..=i {
            let mut s = a[i * p + j];
            for m in 0..j {
                s -= l[i * p + m] * l[j * p + m];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(Error::NotPositiveDefinite);
                }
                l[i * p + i] = s.sqrt();
            } else {
                l[i * p + j] = s / l[j * p + j];
            }
        }
    }
    Ok(l)
}

/// Factors a symmetric matrix given row-major.
pub fn cholesky(dim: usize, matrix: &[f64]) -> Result<SpdMatrix> {
    SpdMatrix::new(dim, matrix.to_vec())
}

/// Log-density of `N(mean, cov)` at `x`.
pub fn mvn_logpdf(x: &[f64], mean: &[f64], cov: &SpdMatrix) -> Result<f64> {
    let p = cov.dim();
    for v in [x, mean] {
        if v.len() != p {
            return Err(Error::DimensionMismatch { expected: p, got: v.len() });
        }
    }
    let mut scratch = vec![0.0; p];
    Ok(mvn_logpdf_unchecked(x, mean, cov, &mut scratch))
}

#[inline]
pub(crate) fn mvn_logpdf_unchecked(x: &[f64], mean: &[f64], cov: &SpdMatrix, scratch: &mut [f64]) -> f64 {
    let p = cov.dim() as f64;
    -0.5 * p * LN_2PI - cov.half_log_det() - 0.5 * cov.mahalanobis_sq(x, mean, scratch)
}

/// Normalizing term `-(p/2) log 2π - Σ log L_ii` of a Gaussian log-density.
#[inline]
pub(crate) fn log_norm_const(cov: &SpdMatrix) -> f64 {
    -0.5 * cov.dim() as f64 * LN_2PI - cov.half_log_det()
}

/// Draws `mean + L z` with `z` i.i.d. standard normal.
pub fn mvn_sample<R: Rng + ?Sized>(rng: &mut R, mean: &[f64], cov: &SpdMatrix) -> Vec<f64> {
    let p = cov.dim();
    let z: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
    let l = cov.chol();
    (0..p)
        .map(|i| mean[i] + (0..=i).map(|j| l[i * p + j] * z[j]).sum::<f64>())
        .collect()
}

/// Smallest eigenvalue.
pub fn min_eigenvalue(cov: &SpdMatrix) -> f64 {
    let e = cov.entries();
    if cov.dim() == 2 {
        let (a, b, d) = (e[0], e[1], e[3]);
        let half_tr = 0.5 * (a + d);
        return half_tr - (0.25 * (a - d) * (a - d) + b * b).sqrt();
    }
    let p = cov.dim();
    SymmetricEigen::new(DMatrix::from_row_slice(p, p, e)).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Ratio of largest to smallest eigenvalue.
pub fn condition_number(cov: &SpdMatrix) -> f64 {
    let p = cov.dim();
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(p, p, cov.entries())).eigenvalues;
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Standard normal CDF.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal upper tail `1 - Φ(z)`, accurate far into the tail.
pub fn std_normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// `log Σ exp(v_i)`; `-∞` for an empty slice or all `-∞` entries.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reconstruct(m: &SpdMatrix) -> Vec<f64> {
        let p = m.dim();
        let l = m.chol();
        let mut out = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..p {
                out[i * p + j] = (0..p).map(|k| l[i * p + k] * l[j * p + k]).sum();
            }
        }
        out
    }

    fn inf_norm(p: usize, m: &[f64]) -> f64 {
        m.chunks(p).map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    #[test]
    fn identity_factor() {
        let m = SpdMatrix::identity(2);
        assert_eq!(m.chol(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn diagonal_factor() {
        let m = cholesky(2, &[4.0, 0.0, 0.0, 9.0]).unwrap();
        assert_eq!(m.chol(), &[2.0, 0.0, 0.0, 3.0]);
    }

    #[test]
    fn random_outer_product_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for p in 1..=8 {
            for _ in 0..20 {
                let a: Vec<f64> = (0..p * p).map(|_| rng.random_range(-2.0..2.0)).collect();
                let mut m = vec![0.0; p * p];
                for i in 0..p {
                    for j in 0..p {
                        m[i * p + j] = (0..p).map(|k| a[i * p + k] * a[j * p + k]).sum::<f64>();
                    }
                    m[i * p + i] += p as f64;
                }
                let spd = cholesky(p, &m).unwrap();
                let r = reconstruct(&spd);
                let diff: Vec<f64> = r.iter().zip(&m).map(|(x, y)| x - y).collect();
                assert!(inf_norm(p, &diff) / inf_norm(p, &m) < 1e-10);
            }
        }
    }

    #[test]
    fn rejects_indefinite_and_asymmetric() {
        assert_eq!(cholesky(2, &[1.0, 2.0, 2.0, 1.0]), Err(Error::NotPositiveDefinite));
        assert_eq!(cholesky(2, &[0.0, 0.0, 0.0, 0.0]), Err(Error::NotPositiveDefinite));
        assert!(matches!(cholesky(2, &[1.0, 0.1, 0.0, 1.0]), Err(Error::NotSymmetric(_))));
        // rounding-level asymmetry is symmetrized away
        let m = cholesky(2, &[1.0, 0.1 + 1e-14, 0.1, 1.0]).unwrap();
        assert_eq!(m.get(0, 1), m.get(1, 0));
    }

    #[test]
    fn logpdf_standard_origin() {
        let v = mvn_logpdf(&[0.0, 0.0], &[0.0, 0.0], &SpdMatrix::identity(2)).unwrap();
        assert!((v + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn logpdf_at_mean() {
        let cov = SpdMatrix::from_rows(&[vec![2.0, 0.3, 0.1], vec![0.3, 1.0, -0.2], vec![0.1, -0.2, 0.5]]).unwrap();
        let mu = [0.4, -1.0, 2.0];
        let v = mvn_logpdf(&mu, &mu, &cov).unwrap();
        assert!((v - (-1.5 * LN_2PI - cov.half_log_det())).abs() < 1e-15);
    }

    #[test]
    fn logpdf_matches_closed_form_2x2() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let a: f64 = rng.random_range(0.1..5.0);
            let c: f64 = rng.random_range(0.1..5.0);
            let b: f64 = rng.random_range(-0.9..0.9) * (a * c).sqrt();
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let mu = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let det = a * c - b * b;
            let (d0, d1) = (x[0] - mu[0], x[1] - mu[1]);
            let q = (c * d0 * d0 - 2.0 * b * d0 * d1 + a * d1 * d1) / det;
            let expected = -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * q;
            let cov = SpdMatrix::from_rows(&[vec![a, b], vec![b, c]]).unwrap();
            let got = mvn_logpdf(&x, &mu, &cov).unwrap();
            assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        }
    }

    #[test]
    fn logpdf_dimension_mismatch() {
        let r = mvn_logpdf(&[0.0], &[0.0, 0.0], &SpdMatrix::identity(2));
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn sample_mean_standard() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let cov = SpdMatrix::identity(2);
        let mut sum = [0.0; 2];
        for _ in 0..n {
            let x = mvn_sample(&mut rng, &[0.0, 0.0], &cov);
            sum[0] += x[0];
            sum[1] += x[1];
        }
        for s in sum {
            assert!((s / n as f64).abs() < 4.0 / (n as f64).sqrt());
        }
    }

    #[test]
    fn sample_moments_shifted() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 100_000;
        let cov = SpdMatrix::diagonal(&[1.0, 4.0]).unwrap();
        let xs: Vec<Vec<f64>> = (0..n).map(|_| mvn_sample(&mut rng, &[5.0, 5.0], &cov)).collect();
        for (j, target) in [1.0, 4.0].into_iter().enumerate() {
            let m = xs.iter().map(|x| x[j]).sum::<f64>() / n as f64;
            let v = xs.iter().map(|x| (x[j] - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((v - target).abs() / target < 0.1);
        }
    }

    #[test]
    fn sample_deterministic() {
        let cov = SpdMatrix::identity(3);
        let a = mvn_sample(&mut ChaCha8Rng::seed_from_u64(9), &[0.0; 3], &cov);
        let b = mvn_sample(&mut ChaCha8Rng::seed_from_u64(9), &[0.0; 3], &cov);
        assert_eq!(a, b);
    }

    #[test]
    fn condition_numbers() {
        assert!((condition_number(&SpdMatrix::identity(3)) - 1.0).abs() < 1e-12);
        let d = SpdMatrix::diagonal(&[100.0, 0.001]).unwrap();
        assert!((condition_number(&d) - 1e5).abs() / 1e5 < 1e-10);
        for c in [1e-6, 0.3, 7.0, 1e6] {
            let m = SpdMatrix::scaled_identity(4, c).unwrap();
            assert!((condition_number(&m) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn min_eigenvalue_matches_eigendecomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let a: f64 = rng.random_range(0.01..10.0);
            let c: f64 = rng.random_range(0.01..10.0);
            let b: f64 = rng.random_range(-0.99..0.99) * (a * c).sqrt();
            let m = SpdMatrix::from_rows(&[vec![a, b], vec![b, c]]).unwrap();
            let eig = SymmetricEigen::new(DMatrix::from_row_slice(2, 2, m.entries())).eigenvalues;
            assert!((min_eigenvalue(&m) - eig.min()).abs() < 1e-12 * eig.max());
        }
        assert_eq!(min_eigenvalue(&SpdMatrix::diagonal(&[3.0, 0.5, 2.0]).unwrap()), 0.5);
    }

    #[test]
    fn condition_number_2x2_quadratic_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let a: f64 = rng.random_range(0.01..10.0);
            let c: f64 = rng.random_range(0.01..10.0);
            let b: f64 = rng.random_range(-0.99..0.99) * (a * c).sqrt();
            let half_tr = 0.5 * (a + c);
            let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            let expected = (half_tr + disc) / (half_tr - disc);
            let got = condition_number(&SpdMatrix::from_rows(&[vec![a, b], vec![b, c]]).unwrap());
            assert!((got - expected).abs() / expected < 1e-10, "{got} vs {expected}");
        }
    }

    #[test]
    fn normal_cdf_values() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        assert_eq!(std_normal_cdf(f64::INFINITY), 1.0);
        assert_eq!(std_normal_cdf(f64::NEG_INFINITY), 0.0);
        // Taylor series of erf in extended summation order, independent of libm
        let series_cdf = |z: f64| {
            let x = z / std::f64::consts::SQRT_2;
            let mut term = x;
            let mut sum = x;
            for n in 1..200 {
                term *= -x * x / n as f64;
                sum += term / (2 * n + 1) as f64;
            }
            0.5 + sum / std::f64::consts::PI.sqrt()
        };
        assert!((std_normal_cdf(1.96) - series_cdf(1.96)).abs() < 1e-12);
        assert!((std_normal_cdf(1.96) - 0.975_002_104_851_780).abs() < 1e-12);
        for i in -40..=40 {
            let z = i as f64 * 0.07;
            assert!((std_normal_cdf(z) - series_cdf(z)).abs() < 1e-12);
        }
    }

    #[test]
    fn normal_cdf_symmetry() {
        for i in -800..=800 {
            let z = i as f64 / 100.0;
            assert!((std_normal_cdf(z) + std_normal_cdf(-z) - 1.0).abs() < 1e-12);
            assert!((std_normal_sf(z) - std_normal_cdf(-z)).abs() < 1e-15);
        }
    }

    #[test]
    fn lse() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}

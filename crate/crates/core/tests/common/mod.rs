#![allow(dead_code)]

use cic_core::benchmark::ParabolicLimitState;
use cic_core::estimators::{BatchStore, WeightedPoint};
use cic_core::quadrature::integrate;
use cic_core::{GmmParams, SpdMatrix};

pub fn unit_proposal(p: usize) -> GmmParams {
    GmmParams::equal_weights(vec![vec![0.0; p]], vec![SpdMatrix::identity(p)]).unwrap()
}

/// Single-batch store with the given points and weights.
pub fn store_from(points: &[(Vec<f64>, f64)]) -> BatchStore {
    let p = points[0].0.len();
    let mut s = BatchStore::new(p);
    let pts = points.iter().map(|(x, w)| WeightedPoint { x: x.clone(), r_value: *w, log_proposal: 0.0, weight: *w }).collect();
    s.push_batch(unit_proposal(p), pts).unwrap();
    s
}

/// Bivariate normal density written out with the explicit 2x2 inverse.
pub fn gauss2_pdf(x: &[f64], m: &[f64], c: &[f64; 4]) -> f64 {
    let det = c[0] * c[3] - c[1] * c[2];
    let (dx, dy) = (x[0] - m[0], x[1] - m[1]);
    let q = (c[3] * dx * dx - (c[1] + c[2]) * dx * dy + c[0] * dy * dy) / det;
    (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
}

pub fn gmm2_pdf(alphas: &[f64], means: &[[f64; 2]], covs: &[[f64; 4]], x: &[f64]) -> f64 {
    alphas.iter().zip(means).zip(covs).map(|((a, m), c)| a * gauss2_pdf(x, m, c)).sum()
}

/// One textbook EM step (unweighted, densities in linear scale) for a 2-D mixture.
pub fn plain_em_step(xs: &[[f64; 2]], alphas: &[f64], means: &[[f64; 2]], covs: &[[f64; 4]]) -> (Vec<f64>, Vec<[f64; 2]>, Vec<[f64; 4]>) {
    let k = alphas.len();
    let n = xs.len();
    let mut gamma = vec![vec![0.0; k]; n];
    for (i, x) in xs.iter().enumerate() {
        let dens: Vec<f64> = (0..k).map(|j| alphas[j] * gauss2_pdf(x, &means[j], &covs[j])).collect();
        let tot: f64 = dens.iter().sum();
        for j in 0..k {
            gamma[i][j] = dens[j] / tot;
        }
    }
    let mut new_a = vec![0.0; k];
    let mut new_m = vec![[0.0; 2]; k];
    let mut new_c = vec![[0.0; 4]; k];
    for j in 0..k {
        let nj: f64 = gamma.iter().map(|g| g[j]).sum();
        new_a[j] = nj / n as f64;
        for (g, x) in gamma.iter().zip(xs) {
            new_m[j][0] += g[j] * x[0] / nj;
            new_m[j][1] += g[j] * x[1] / nj;
        }
        for (g, x) in gamma.iter().zip(xs) {
            let d = [x[0] - new_m[j][0], x[1] - new_m[j][1]];
            new_c[j][0] += g[j] * d[0] * d[0] / nj;
            new_c[j][1] += g[j] * d[0] * d[1] / nj;
            new_c[j][3] += g[j] * d[1] * d[1] / nj;
        }
        new_c[j][2] = new_c[j][1];
    }
    (new_a, new_m, new_c)
}

pub fn to_arrays(g: &GmmParams) -> (Vec<f64>, Vec<[f64; 2]>, Vec<[f64; 4]>) {
    let means = g.means().iter().map(|m| [m[0], m[1]]).collect();
    let covs = g.covs().iter().map(|c| [c.get(0, 0), c.get(0, 1), c.get(1, 0), c.get(1, 1)]).collect();
    (g.weights().to_vec(), means, covs)
}

pub fn phi2(x0: f64, x1: f64) -> f64 {
    (-0.5 * (x0 * x0 + x1 * x1)).exp() / (2.0 * std::f64::consts::PI)
}

/// `∫∫_{g <= 0} φ₂(x) f(x) dx` by nested 1-D quadrature on `[-10, 10]²`.
pub fn failure_region_integral<F: Fn(f64, f64) -> f64>(ls: &ParabolicLimitState, f: F, tol: f64) -> f64 {
    integrate(
        |x0| {
            let d = x0 - ls.e;
            let lower = (ls.b - ls.kappa * d * d).max(-10.0);
            if lower >= 10.0 {
                return 0.0;
            }
            integrate(|x1| phi2(x0, x1) * f(x0, x1), lower, 10.0, tol * 1e-2)
        },
        -10.0,
        10.0,
        tol,
    )
}

pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

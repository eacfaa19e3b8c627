//! Oracles shared by the integration tests. Nothing here calls into the
//! library's solvers.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Discrete state-space system `x+ = Ax + Bu`, `y = Cx + Du`.
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl StateSpace {
    /// Random system whose state matrix has spectral radius `radius`,
    /// rescaled by power iteration on `A^k` norms.
    pub fn random(rng: &mut ChaCha8Rng, order: usize, inputs: usize, outputs: usize, radius: f64) -> Self {
        let mut a = gaussian_matrix(rng, order, order);
        let rho = spectral_radius(&a);
        a *= radius / rho;
        Self {
            a,
            b: gaussian_matrix(rng, order, inputs),
            c: gaussian_matrix(rng, outputs, order),
            d: gaussian_matrix(rng, outputs, inputs),
        }
    }

    /// Outputs for the input columns of `u` (inputs x T) from state `x0`.
    pub fn simulate(&self, u: &DMatrix<f64>, x0: &DVector<f64>) -> DMatrix<f64> {
        let mut x = x0.clone();
        let mut y = DMatrix::zeros(self.c.nrows(), u.ncols());
        for k in 0..u.ncols() {
            let uk = u.column(k);
            y.set_column(k, &(&self.c * &x + &self.d * uk));
            x = &self.a * &x + &self.b * uk;
        }
        y
    }
}

/// Spectral radius from the growth of `||A^k||`, k = 2^20.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    let mut m = a.clone();
    let mut log_scale = 0.0;
    let mut steps = 1.0;
    for _ in 0..20 {
        m = &m * &m;
        steps *= 2.0;
        let n = m.norm();
        m /= n;
        log_scale = 2.0 * log_scale + n.ln();
    }
    (log_scale / steps).exp()
}

/// Rank by Gaussian elimination with full pivoting; entries below
/// `tol * max|m|` count as zero.
pub fn rank_by_elimination(m: &DMatrix<f64>, tol: f64) -> usize {
    let mut a = m.clone();
    let (rows, cols) = a.shape();
    let scale = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 {
        return 0;
    }
    let mut rank = 0;
    for r in 0..rows.min(cols) {
        let mut best = (0.0, r, r);
        for i in r..rows {
            for j in r..cols {
                if a[(i, j)].abs() > best.0 {
                    best = (a[(i, j)].abs(), i, j);
                }
            }
        }
        if best.0 <= tol * scale {
            break;
        }
        a.swap_rows(r, best.1);
        a.swap_columns(r, best.2);
        for i in r + 1..rows {
            let f = a[(i, r)] / a[(r, r)];
            for j in r..cols {
                let v = a[(r, j)];
                a[(i, j)] -= f * v;
            }
        }
        rank += 1;
    }
    rank
}

/// Least-squares solution through modified Gram-Schmidt QR, each column
/// orthogonalized twice.
pub fn least_squares_qr(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let (rows, cols) = a.shape();
    let mut q = a.clone();
    let mut r = DMatrix::zeros(cols, cols);
    for j in 0..cols {
        for _ in 0..2 {
            for i in 0..j {
                let dot = q.column(i).dot(&q.column(j));
                r[(i, j)] += dot;
                let qi = q.column(i).clone_owned();
                q.column_mut(j).axpy(-dot, &qi, 1.0);
            }
        }
        let n = q.column(j).norm();
        r[(j, j)] = n;
        q.column_mut(j).scale_mut(1.0 / n);
    }
    let qtb = q.tr_mul(b);
    let mut x = DVector::zeros(cols);
    for i in (0..cols).rev() {
        let s: f64 = (i + 1..cols).map(|j| r[(i, j)] * x[j]).sum();
        x[i] = (qtb[i] - s) / r[(i, i)];
    }
    debug_assert_eq!(rows, b.len());
    x
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

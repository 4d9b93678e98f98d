//! Ordinary least squares through a column-pivoted Householder QR.
//!
//! Rank deficiency (collinear calendar indicators are common) is handled with
//! a complete orthogonal decomposition, which yields the minimum-norm
//! coefficient vector among all least-squares minimizers.

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Numerical rank of `[1 | X]`.
    pub rank: usize,
}

impl LinearModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    }

    pub fn is_rank_deficient(&self) -> bool {
        self.rank < self.coefficients.len() + 1
    }
}

/// Fits `y ≈ β₀ + Xβ`.
pub fn fit_ols(x: &FeatureMatrix) -> Result<LinearModel, ModelError> {
    let rows = x.n_rows();
    if rows == 0 {
        return Err(ModelError::EmptyMatrix);
    }
    let cols = x.n_features() + 1;
    let mut design = DenseMatrix::zeros(rows, cols);
    for i in 0..rows {
        design.set(i, 0, 1.0);
    }
    for (j, col) in x.columns.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            design.set(i, j + 1, v);
        }
    }
    let solution = least_squares_min_norm(design, &x.target);
    Ok(LinearModel {
        intercept: solution.beta[0],
        names: x.names.clone(),
        coefficients: solution.beta[1..].to_vec(),
        rank: solution.rank,
    })
}

/// Row-major dense matrix.
#[derive(Debug, Clone)]
pub(crate) struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub(crate) fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub(crate) fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }
}

/// Householder reflectors stored below the diagonal of `a`, with `tau` and
/// the column permutation.
struct PivotedQr {
    a: DenseMatrix,
    tau: Vec<f64>,
    perm: Vec<usize>,
    rank: usize,
}

/// Householder QR with column pivoting on the largest remaining column norm.
fn pivoted_qr(mut a: DenseMatrix, pivot: bool) -> PivotedQr {
    let (m, n) = (a.rows, a.cols);
    let k_max = m.min(n);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut tau = vec![0.0; k_max];
    let mut norms: Vec<f64> = (0..n).map(|j| (0..m).map(|i| a.get(i, j).powi(2)).sum()).collect();
    let max_norm = norms.iter().cloned().fold(0.0, f64::max).sqrt();

    for k in 0..k_max {
        if pivot {
            // Recompute remaining norms exactly; the matrices here are small enough.
            for j in k..n {
                norms[j] = (k..m).map(|i| a.get(i, j).powi(2)).sum();
            }
            let best = (k..n).fold(k, |b, j| if norms[j] > norms[b] { j } else { b });
            if best != k {
                for i in 0..m {
                    let (x, y) = (a.get(i, k), a.get(i, best));
                    a.set(i, k, y);
                    a.set(i, best, x);
                }
                perm.swap(k, best);
                norms.swap(k, best);
            }
        }
        let alpha_norm = (k..m).map(|i| a.get(i, k).powi(2)).sum::<f64>().sqrt();
        if alpha_norm == 0.0 {
            tau[k] = 0.0;
            continue;
        }
        let x0 = a.get(k, k);
        let beta = if x0 >= 0.0 { -alpha_norm } else { alpha_norm };
        let v0 = x0 - beta;
        for i in k + 1..m {
            a.set(i, k, a.get(i, k) / v0);
        }
        tau[k] = (beta - x0) / beta;
        a.set(k, k, beta);
        for j in k + 1..n {
            let mut dot = a.get(k, j);
            for i in k + 1..m {
                dot += a.get(i, k) * a.get(i, j);
            }
            let s = tau[k] * dot;
            a.set(k, j, a.get(k, j) - s);
            for i in k + 1..m {
                a.set(i, j, a.get(i, j) - s * a.get(i, k));
            }
        }
    }

    let tol = (m.max(n) as f64) * f64::EPSILON * max_norm.max(f64::MIN_POSITIVE);
    let rank = (0..k_max).take_while(|&k| a.get(k, k).abs() > tol).count();
    PivotedQr { a, tau, perm, rank }
}

impl PivotedQr {
    /// Applies `Qᵀ` to `b` in place.
    fn apply_qt(&self, b: &mut [f64]) {
        let m = self.a.rows;
        for k in 0..self.tau.len() {
            if self.tau[k] == 0.0 {
                continue;
            }
            let mut dot = b[k];
            for i in k + 1..m {
                dot += self.a.get(i, k) * b[i];
            }
            let s = self.tau[k] * dot;
            b[k] -= s;
            for i in k + 1..m {
                b[i] -= s * self.a.get(i, k);
            }
        }
    }

    /// Applies `Q` to `b` in place.
    fn apply_q(&self, b: &mut [f64]) {
        let m = self.a.rows;
        for k in (0..self.tau.len()).rev() {
            if self.tau[k] == 0.0 {
                continue;
            }
            let mut dot = b[k];
            for i in k + 1..m {
                dot += self.a.get(i, k) * b[i];
            }
            let s = self.tau[k] * dot;
            b[k] -= s;
            for i in k + 1..m {
                b[i] -= s * self.a.get(i, k);
            }
        }
    }
}

pub(crate) struct LeastSquares {
    pub beta: Vec<f64>,
    pub rank: usize,
}

/// Minimum-norm least-squares solution of `A β ≈ y`.
pub(crate) fn least_squares_min_norm(a: DenseMatrix, y: &[f64]) -> LeastSquares {
    let n = a.cols;
    let qr = pivoted_qr(a, true);
    let r = qr.rank;
    let mut c = y.to_vec();
    qr.apply_qt(&mut c);
    let mut z = vec![0.0; n];
    if r == n {
        // Full rank: back substitution on R.
        for i in (0..n).rev() {
            let mut s = c[i];
            for j in i + 1..n {
                s -= qr.a.get(i, j) * z[j];
            }
            z[i] = s / qr.a.get(i, i);
        }
    } else if r > 0 {
        // [R11 R12]ᵀ = W T (QR of the n×r transpose); then
        // z = W T⁻ᵀ c₁ is the minimum-norm solution of [R11 R12] z = c₁.
        let mut upper = DenseMatrix::zeros(r, n);
        for i in 0..r {
            for j in i..n {
                upper.set(i, j, qr.a.get(i, j));
            }
        }
        let second = pivoted_qr(upper.transpose(), false);
        let mut w = vec![0.0; n];
        for i in 0..r {
            let mut s = c[i];
            for (j, wj) in w.iter().enumerate().take(i) {
                s -= second.a.get(j, i) * wj;
            }
            w[i] = s / second.a.get(i, i);
        }
        second.apply_q(&mut w);
        z = w;
    }
    let mut beta = vec![0.0; n];
    for (k, &p) in qr.perm.iter().enumerate() {
        beta[p] = z[k];
    }
    LeastSquares { beta, rank: r }
}

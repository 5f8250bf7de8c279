//! Compressed sparse row matrices and the linear solver used by Newton.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Relative residual required of every linear solve.
pub const LINEAR_RTOL: f64 = 1e-12;
/// Largest relative residual accepted when the target stalls at roundoff.
pub const LINEAR_ACCEPT_RTOL: f64 = 1e-9;
/// Systems up to this size fall back to dense LU when CG breaks down.
pub const DENSE_FALLBACK_MAX: usize = 4000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearError {
    #[error("linear solve broke down: {0}")]
    Breakdown(String),
    #[error("linear solve stalled at relative residual {0:e}")]
    NotConverged(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Zero matrix on a pattern given by sorted column lists per row.
    pub fn from_rows(rows: &[Vec<usize>]) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for r in rows {
            debug_assert!(r.windows(2).all(|w| w[0] < w[1]));
            col_idx.extend_from_slice(r);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Storage slot of entry `(i, j)`, if it is in the pattern.
    pub fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let cols = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        cols.binary_search(&j).ok().map(|k| self.row_ptr[i] + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.col_idx[k], self.values[k]))
    }

    pub fn zero(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            *yi = self.row(i).map(|(j, a)| a * x[j]).sum();
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, a) in self.row(i) {
                worst = worst.max((a - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, a) in self.row(i) {
                m[(i, j)] = a;
            }
        }
        m
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn true_residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    let mut ax = vec![0.0; b.len()];
    a.mul_vec(x, &mut ax);
    b.iter().zip(&ax).map(|(bi, axi)| bi - axi).collect()
}

/// Jacobi-preconditioned conjugate gradients for symmetric positive definite `a`.
pub fn pcg(a: &CsrMatrix, b: &[f64], rtol: f64, max_iter: usize) -> Result<Vec<f64>, LinearError> {
    let n = a.dim();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { f64::NAN })
        .collect();
    if inv_diag.iter().any(|d| d.is_nan()) {
        return Err(LinearError::Breakdown("non-positive diagonal".into()));
    }
    // restarts from the true residual guard against recurrence drift
    for _restart in 0..4 {
        let mut r = true_residual(a, &x, b);
        if norm(&r) <= rtol * bnorm {
            return Ok(x);
        }
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![0.0; n];
        for _ in 0..max_iter {
            a.mul_vec(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(LinearError::Breakdown(format!("non-positive curvature {pap:e}")));
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if norm(&r) <= 0.1 * rtol * bnorm {
                break;
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
    }
    let rel = norm(&true_residual(a, &x, b)) / bnorm;
    if rel <= rtol.max(LINEAR_ACCEPT_RTOL) {
        Ok(x)
    } else {
        Err(LinearError::NotConverged(rel))
    }
}

/// Dense LU solve with a relative residual check.
pub fn dense_solve(a: &CsrMatrix, b: &[f64], rtol: f64) -> Result<Vec<f64>, LinearError> {
    let lu = a.to_dense().lu();
    let x = lu
        .solve(&DVector::from_column_slice(b))
        .ok_or_else(|| LinearError::Breakdown("singular matrix".into()))?;
    let x: Vec<f64> = x.iter().copied().collect();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LinearError::Breakdown("non-finite solution".into()));
    }
    let rel = norm(&true_residual(a, &x, b)) / norm(b).max(f64::MIN_POSITIVE);
    if rel <= rtol.max(LINEAR_ACCEPT_RTOL) {
        Ok(x)
    } else {
        Err(LinearError::NotConverged(rel))
    }
}

/// CG first; dense LU for small systems when CG fails (indefinite Jacobians in unsafe runs).
pub fn solve(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>, LinearError> {
    match pcg(a, b, LINEAR_RTOL, 10 * a.dim() + 100) {
        Ok(x) => Ok(x),
        Err(e) if a.dim() <= DENSE_FALLBACK_MAX => dense_solve(a, b, LINEAR_RTOL).map_err(|_| e),
        Err(e) => Err(e),
    }
}

//! Small dense matrix helpers for the scoring backends: row-major matrices,
//! Cholesky factorization and a Jacobi eigensolver for symmetric matrices.
//! Dimensions here are embedding-sized (tens to a few hundred), so simple
//! O(n^3) routines are fine.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::fmath;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LinalgError {
    NotPositiveDefinite,
    Dimension(String),
    NoConvergence,
}

impl fmt::Display for LinalgError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinalgError::NotPositiveDefinite => write!(f, "matrix is not positive definite"),
            LinalgError::Dimension(msg) => write!(f, "dimension mismatch: {msg}"),
            LinalgError::NoConvergence => write!(f, "eigensolver did not converge"),
        }
    }
}

impl core::error::Error for LinalgError {}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Mat {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Mat, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.at(i, j)).collect()
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.at(i, j));
            }
        }
        out
    }

    pub fn matmul(&self, other: &Mat) -> Result<Mat, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::Dimension(format!(
                "{}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for p in 0..self.cols {
                let a = self.at(i, p);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.at(p, j);
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if v.len() != self.cols {
            return Err(LinalgError::Dimension(format!(
                "{}x{} * vector of {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn scale(&self, c: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add(&self, other: &Mat) -> Result<Mat, LinalgError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(LinalgError::Dimension(format!(
                "{}x{} + {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Mat) -> Result<Mat, LinalgError> {
        self.add(&other.scale(-1.0))
    }

    pub fn add_scaled_identity(&self, c: f64) -> Mat {
        let mut out = self.clone();
        for i in 0..self.rows.min(self.cols) {
            out.data[i * self.cols + i] += c;
        }
        out
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.at(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        fmath::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    /// Force exact symmetry by averaging with the transpose.
    pub fn symmetrized(&self) -> Mat {
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in 0..i {
                let v = 0.5 * (self.at(i, j) + self.at(j, i));
                out.set(i, j, v);
                out.set(j, i, v);
            }
        }
        out
    }

    /// Lower Cholesky factor L with self = L * L^T. Requires symmetric
    /// positive definite input.
    pub fn cholesky(&self) -> Result<Mat, LinalgError> {
        let n = self.rows;
        if self.cols != n {
            return Err(LinalgError::Dimension(String::from(
                "cholesky needs a square matrix",
            )));
        }
        let mut l = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = self.at(i, j);
                for k in 0..j {
                    s -= l.at(i, k) * l.at(j, k);
                }
                if i == j {
                    if s <= 0.0 {
                        return Err(LinalgError::NotPositiveDefinite);
                    }
                    l.set(i, j, fmath::sqrt(s));
                } else {
                    l.set(i, j, s / l.at(j, j));
                }
            }
        }
        Ok(l)
    }

    /// Solve L * x = b with L lower triangular (forward substitution).
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.rows;
        let mut x = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                x[i] -= self.at(i, k) * x[k];
            }
            x[i] /= self.at(i, i);
        }
        x
    }

    /// Solve L^T * x = b with L lower triangular (back substitution).
    pub fn solve_lower_transposed(&self, b: &[f64]) -> Vec<f64> {
        let n = self.rows;
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            for k in i + 1..n {
                x[i] -= self.at(k, i) * x[k];
            }
            x[i] /= self.at(i, i);
        }
        x
    }
}

/// Solve (L L^T) x = b given the Cholesky factor.
pub fn chol_solve(l: &Mat, b: &[f64]) -> Vec<f64> {
    l.solve_lower_transposed(&l.solve_lower(b))
}

/// Solve (L L^T) X = B column-wise.
pub fn chol_solve_mat(l: &Mat, b: &Mat) -> Mat {
    let mut out = Mat::zeros(b.rows, b.cols);
    for j in 0..b.cols {
        let col = chol_solve(l, &b.col(j));
        for i in 0..b.rows {
            out.set(i, j, col[i]);
        }
    }
    out
}

/// log det(L L^T) = 2 * sum(log diag(L)).
pub fn chol_logdet(l: &Mat) -> f64 {
    2.0 * (0..l.rows).map(|i| fmath::ln(l.at(i, i))).sum::<f64>()
}

/// Quadratic form x^T (L L^T)^{-1} x given the Cholesky factor.
pub fn chol_quadform(l: &Mat, x: &[f64]) -> f64 {
    let y = l.solve_lower(x);
    y.iter().map(|v| v * v).sum()
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order with matching eigenvector
/// columns: self = V * diag(w) * V^T.
pub fn jacobi_eigh(a: &Mat) -> Result<(Vec<f64>, Mat), LinalgError> {
    let n = a.rows;
    if a.cols != n {
        return Err(LinalgError::Dimension(String::from(
            "eigendecomposition needs a square matrix",
        )));
    }
    let mut m = a.symmetrized();
    let mut v = Mat::identity(n);
    let scale = m.frobenius_norm().max(1e-300);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += m.at(i, j) * m.at(i, j);
            }
        }
        if fmath::sqrt(2.0 * off) < 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.at(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m.at(p, p);
                let aqq = m.at(q, q);
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + fmath::sqrt(1.0 + tau * tau))
                } else {
                    -1.0 / (-tau + fmath::sqrt(1.0 + tau * tau))
                };
                let c = 1.0 / fmath::sqrt(1.0 + t * t);
                let s = t * c;
                for k in 0..n {
                    let mkp = m.at(k, p);
                    let mkq = m.at(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.at(p, k);
                    let mqk = m.at(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| m.at(i, i)).collect();
    order.sort_by(|&a, &b| diag[b].partial_cmp(&diag[a]).expect("finite eigenvalues"));
    let eigvals: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut eigvecs = Mat::zeros(n, n);
    for (new_j, &old_j) in order.iter().enumerate() {
        for i in 0..n {
            eigvecs.set(i, new_j, v.at(i, old_j));
        }
    }
    Ok((eigvals, eigvecs))
}

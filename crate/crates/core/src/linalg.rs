//! Minimal dense row-major matrix used throughout the crate.
//!
//! All reductions run in index order so results are reproducible bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{AvseError, Result};

/// Guard applied to every norm that ends up in a denominator.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(AvseError::domain(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(AvseError::domain(format!(
                    "row {i} has length {}, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.data[r * self.cols + c]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(AvseError::domain(format!(
                "matmul shape mismatch: {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let lhs = self.row(r);
            let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for (k, &a) in lhs.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                axpy(a, other.row(k), dst);
            }
        }
        Ok(out)
    }

    /// Column-wise mean of the given rows (in order).
    pub fn mean_of_rows(&self, rows: impl IntoIterator<Item = usize>) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.cols];
        let mut count = 0usize;
        for r in rows {
            if r >= self.rows {
                return Err(AvseError::domain(format!(
                    "row index {r} out of bounds for {} rows",
                    self.rows
                )));
            }
            for (a, &x) in acc.iter_mut().zip(self.row(r)) {
                *a += x;
            }
            count += 1;
        }
        if count == 0 {
            return Err(AvseError::domain("cannot average zero rows"));
        }
        let inv = count as f64;
        acc.iter_mut().for_each(|a| *a /= inv);
        Ok(acc)
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `dst += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], dst: &mut [f64]) {
    for (d, &v) in dst.iter_mut().zip(x) {
        *d += alpha * v;
    }
}

/// Cosine similarity with denominators clamped to [`NORM_EPS`].
pub fn guarded_cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a).max(NORM_EPS) * norm(b).max(NORM_EPS))
}

/// Gradient of [`guarded_cosine`] with respect to `a`, accumulated into `out` scaled by `upstream`.
pub fn guarded_cosine_grad_into(a: &[f64], b: &[f64], upstream: f64, out: &mut [f64]) {
    let na = norm(a);
    let nb = norm(b).max(NORM_EPS);
    if na > NORM_EPS {
        let cos = dot(a, b) / (na * nb);
        for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
            *o += upstream * (y / (na * nb) - cos * x / (na * na));
        }
    } else {
        for (o, &y) in out.iter_mut().zip(b) {
            *o += upstream * y / (NORM_EPS * nb);
        }
    }
}

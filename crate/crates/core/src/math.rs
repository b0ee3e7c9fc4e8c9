//! Dense kernels: row-major matrices, vector-times-matrix products and the two
//! activation functions used by the classifier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
///
/// A layer's weights are stored fan-in × fan-out so that the forward pass is
/// the row-vector product `x = y · W`.
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

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major entries, rejecting a length mismatch or
    /// a non-finite entry.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "matrix entries",
                format!("{rows}x{cols} = {} entries", rows * cols),
                format!("{} entries", data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Config(format!(
                "matrix entry ({}, {}) is not finite",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix by evaluating `f(row, col)` for every entry.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Sum of each column, accumulated in row order.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, w) in sums.iter_mut().zip(self.row(i)) {
                *s += w;
            }
        }
        sums
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Row vector times matrix: `out_j = Σ_i y_i · W_ij`.
pub fn matvec(w: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    if y.len() != w.rows {
        return Err(Error::shape(
            "matvec",
            format!(
                "vector of length {} for a {}x{} matrix",
                w.rows, w.rows, w.cols
            ),
            format!("length {}", y.len()),
        ));
    }
    let mut out = vec![0.0; w.cols];
    matvec_acc(w, y, &mut out);
    Ok(out)
}

/// Accumulates `y · W` into `out` without shape checks.
///
/// Rows whose input is exactly zero are skipped; MNIST inputs are mostly
/// background pixels.
#[inline]
pub(crate) fn matvec_acc(w: &Matrix, y: &[f64], out: &mut [f64]) {
    debug_assert_eq!(y.len(), w.rows);
    debug_assert_eq!(out.len(), w.cols);
    for (i, &yi) in y.iter().enumerate() {
        if yi == 0.0 {
            continue;
        }
        for (o, &wij) in out.iter_mut().zip(w.row(i)) {
            *o += yi * wij;
        }
    }
}

/// Logistic function, evaluated through `e^x / (1 + e^x)` for negative
/// arguments so that large |x| never overflows.
#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| sigmoid_scalar(v)).collect()
}

pub fn sigmoid_in_place(x: &mut [f64]) {
    for v in x.iter_mut() {
        *v = sigmoid_scalar(*v);
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let mut out = z.to_vec();
    softmax_in_place(&mut out);
    out
}

/// Max-subtracted softmax. An empty slice is left untouched.
pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return;
    }
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

//! Dense kernels for the small `d x d` problems of the curvature model.
//!
//! Everything here operates on [`Matrix`], a plain row-major buffer. The
//! intended sizes are tiny (the tracked subspace dimension, tens at most), so
//! the algorithms favour determinism and simplicity over blocking or SIMD.

use std::ops::{Index, IndexMut};

use crate::error::{check_len, Error, Result};

/// Default convergence tolerance for [`eigh_small`], relative to `||A||_F`.
pub const EIGH_TOL: f64 = 1e-12;

/// Maximum number of cyclic Jacobi sweeps.
pub const MAX_SWEEPS: usize = 50;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            check_len("Matrix::from_rows", cols, row.len())?;
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// `a b^T`.
    pub fn outer(a: &[f64], b: &[f64]) -> Self {
        Self::from_fn(a.len(), b.len(), |i, j| a[i] * b[j])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols))
            .map(|i| self[(i, i)])
            .collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        check_len("Matrix::matmul", self.cols, other.rows)?;
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                for (o, &b) in out.row_mut(i).iter_mut().zip(src) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("Matrix::mul_vec", self.cols, x.len())?;
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `self^T x`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("Matrix::tr_mul_vec", self.rows, x.len())?;
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            axpy(xi, self.row(i), &mut out);
        }
        Ok(out)
    }

    /// `O self O^T`.
    pub fn conjugate(&self, o: &Matrix) -> Result<Matrix> {
        o.matmul(self)?.matmul(&o.transpose())
    }

    pub fn scaled(&self, factor: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        check_len("Matrix::sub (rows)", self.rows, other.rows)?;
        check_len("Matrix::sub (cols)", self.cols, other.cols)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in i + 1..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// `(A + A^T) / 2`; the result is exactly symmetric.
    pub fn symmetrized(&self) -> Matrix {
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in i + 1..self.cols {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }

    /// Largest `|(A A^T - I)_ij|`.
    pub fn orthogonality_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in i..self.rows {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(self.row(i), self.row(j)) - target).abs());
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Eigendecomposition of a small symmetric matrix.
///
/// `rotation` holds the eigenvectors as rows, so that
/// `rotation * A * rotation^T = diag(values)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenPair {
    /// Sorted by descending magnitude; equal magnitudes by descending value.
    pub values: Vec<f64>,
    pub rotation: Matrix,
}

impl EigenPair {
    /// `O^T diag(values) O`.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.values.len();
        Matrix::from_fn(n, n, |i, j| {
            (0..n)
                .map(|k| self.rotation[(k, i)] * self.values[k] * self.rotation[(k, j)])
                .sum()
        })
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Sweeps run in fixed `(p, q)` order until the off-diagonal Frobenius norm
/// drops below `tol * ||A||_F` or [`MAX_SWEEPS`] is reached. Each eigenvector
/// is signed so that its largest-magnitude component is positive.
pub fn eigh_small(a: &Matrix, tol: f64) -> Result<EigenPair> {
    if !a.is_square() {
        return Err(Error::Dimension {
            context: "eigh_small",
            expected: a.rows(),
            got: a.cols(),
        });
    }
    let n = a.rows();
    let scale = a.frobenius_norm();
    let asym = a.asymmetry();
    if asym > tol.max(1e-12) * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }

    let mut w = a.symmetrized();
    let mut v = Matrix::identity(n);
    let threshold = tol * scale;

    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&w) <= threshold {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = w[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (w[(q, q)] - w[(p, p)]) / (2.0 * apq);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (w[(k, p)], w[(k, q)]);
                    w[(k, p)] = c * akp - s * akq;
                    w[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (w[(p, k)], w[(q, k)]);
                    w[(p, k)] = c * apk - s * aqk;
                    w[(q, k)] = s * apk + c * aqk;
                }
                w[(p, q)] = 0.0;
                w[(q, p)] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let raw = w.diagonal();
    let order = descending_magnitude_order(&raw);
    let values = order.iter().map(|&k| raw[k]).collect();
    let mut rotation = Matrix::zeros(n, n);
    for (row, &k) in order.iter().enumerate() {
        for j in 0..n {
            rotation[(row, j)] = v[(j, k)];
        }
        fix_sign(rotation.row_mut(row));
    }
    Ok(EigenPair { values, rotation })
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let mut sum = 0.0;
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            if i != j {
                sum += a[(i, j)] * a[(i, j)];
            }
        }
    }
    sum.sqrt()
}

// Magnitudes equal to ~1e-10 relative are treated as ties and ordered by value.
fn descending_magnitude_order(values: &[f64]) -> Vec<usize> {
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let bucket = |v: f64| {
        if scale == 0.0 {
            0
        } else {
            (v.abs() / scale * 1e10).round() as i64
        }
    };
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        bucket(values[b])
            .cmp(&bucket(values[a]))
            .then(values[b].total_cmp(&values[a]))
    });
    order
}

fn fix_sign(vector: &mut [f64]) {
    let largest = vector.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if let Some(lead) = vector.iter().find(|v| v.abs() >= largest * (1.0 - 1e-10)) {
        if *lead < 0.0 {
            vector.iter_mut().for_each(|v| *v = -*v);
        }
    }
}

/// Lower Cholesky factor of an SPD matrix.
///
/// Fails with [`Error::Singular`] when a pivot falls below `1e-12` times the
/// largest diagonal entry.
pub fn cholesky(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::Dimension {
            context: "cholesky",
            expected: m.rows(),
            got: m.cols(),
        });
    }
    let n = m.rows();
    let floor = 1e-12 * m.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = m[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > floor) {
            return Err(Error::Singular);
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut sum = m[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = sum / ljj;
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[(i, k)] * y[k];
        }
        y[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[(k, i)] * y[k];
        }
        y[i] /= l[(i, i)];
    }
    y
}

/// Solves `X M = N` for symmetric positive definite `M` without forming `M^-1`.
pub fn right_divide(n: &Matrix, m: &Matrix) -> Result<Matrix> {
    check_len("right_divide", m.rows(), n.cols())?;
    let l = cholesky(m)?;
    let mut x = Matrix::zeros(n.rows(), m.cols());
    for i in 0..n.rows() {
        x.row_mut(i).copy_from_slice(&cholesky_solve(&l, n.row(i)));
    }
    Ok(x)
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(Error::Dimension {
            context: "solve",
            expected: a.rows(),
            got: a.cols(),
        });
    }
    check_len("solve", a.rows(), b.len())?;
    let n = a.rows();
    let mut lu = a.clone();
    let mut x = b.to_vec();
    let floor = f64::EPSILON * n as f64 * a.max_abs();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| lu[(i, col)].abs().total_cmp(&lu[(j, col)].abs()))
            .unwrap_or(col);
        if !(lu[(pivot, col)].abs() > floor) {
            return Err(Error::Singular);
        }
        if pivot != col {
            for j in 0..n {
                let tmp = lu[(col, j)];
                lu[(col, j)] = lu[(pivot, j)];
                lu[(pivot, j)] = tmp;
            }
            x.swap(col, pivot);
        }
        for i in col + 1..n {
            let factor = lu[(i, col)] / lu[(col, col)];
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                lu[(i, j)] -= factor * lu[(col, j)];
            }
            x[i] -= factor * x[col];
        }
    }
    for i in (0..n).rev() {
        let mut sum = x[i];
        for j in i + 1..n {
            sum -= lu[(i, j)] * x[j];
        }
        x[i] = sum / lu[(i, i)];
    }
    Ok(x)
}

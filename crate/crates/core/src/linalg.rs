//! Small dense linear algebra.
//!
//! Matrices here are feature-dimension sized (a handful to a few dozen rows),
//! so everything is row-major `Vec` storage with straightforward loops:
//! Cholesky for SPD solves and log-determinants, cyclic Jacobi for
//! symmetric eigendecompositions.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
#[serde(try_from = "Vec<Vec<T>>", into = "Vec<Vec<T>>")]
pub struct Matrix<T: Real> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> TryFrom<Vec<Vec<T>>> for Matrix<T> {
    type Error = Error;

    fn try_from(rows: Vec<Vec<T>>) -> Result<Self> {
        Matrix::from_rows(rows)
    }
}

impl<T: Real> From<Matrix<T>> for Vec<Vec<T>> {
    fn from(m: Matrix<T>) -> Self {
        m.to_rows()
    }
}

impl<T: Real> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T: Real> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_diag(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::shape("ragged matrix rows"));
        }
        Ok(Matrix {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        })
    }

    /// `x xᵀ`.
    pub fn outer(x: &[T]) -> Self {
        Self::from_fn(x.len(), x.len(), |i, j| x[i] * x[j])
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        self.data
            .chunks(self.cols.max(1))
            .map(<[T]>::to_vec)
            .take(self.rows)
            .collect()
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

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols, "matvec dimension");
        (0..self.rows).map(|i| crate::scalar::dot(self.row(i), x)).collect()
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul dimension");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn scaled(&self, c: T) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * c).collect(),
        }
    }

    /// `self += c * other`.
    pub fn add_scaled(&mut self, c: T, other: &Self) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    /// `self += c * x xᵀ`.
    pub fn add_outer(&mut self, c: T, x: &[T]) {
        assert!(self.is_square() && x.len() == self.rows);
        for i in 0..self.rows {
            let ci = c * x[i];
            if ci == T::zero() {
                continue;
            }
            for j in 0..self.cols {
                self[(i, j)] += ci * x[j];
            }
        }
    }

    pub fn add_diag(&mut self, c: T) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += c;
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.add_scaled(-T::one(), other);
        out
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// `Tr(self · other)` without forming the product.
    pub fn trace_product(&self, other: &Self) -> T {
        assert_eq!(self.cols, other.rows);
        assert_eq!(self.rows, other.cols);
        let mut acc = T::zero();
        for i in 0..self.rows {
            for k in 0..self.cols {
                acc += self[(i, k)] * other[(k, i)];
            }
        }
        acc
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &[T]) -> T {
        assert!(self.is_square() && x.len() == self.rows);
        let mut acc = T::zero();
        for i in 0..self.rows {
            acc += x[i] * crate::scalar::dot(self.row(i), x);
        }
        acc
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn max_asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.is_square() && self.max_asymmetry() <= tol
    }

    pub fn symmetrized(&self) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| (self[(i, j)] + self[(j, i)]) * T::lit(0.5))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Lower-triangular Cholesky factor `A = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky<T: Real> {
    l: Matrix<T>,
}

impl<T: Real> Cholesky<T> {
    /// Factorizes a symmetric positive-definite matrix; `None` if a pivot is not positive.
    pub fn new(a: &Matrix<T>) -> Option<Self> {
        assert!(a.is_square(), "cholesky of non-square matrix");
        let n = a.rows();
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut diag = a[(j, j)];
            for k in 0..j {
                diag -= l[(j, k)] * l[(j, k)];
            }
            if !(diag > T::zero()) || !diag.is_finite() {
                return None;
            }
            let ljj = diag.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        Some(Cholesky { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn factor(&self) -> &Matrix<T> {
        &self.l
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[(i, k)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }

    /// Solves `A X = B` column by column.
    pub fn solve_matrix(&self, b: &Matrix<T>) -> Matrix<T> {
        assert_eq!(b.rows(), self.dim());
        let mut out = Matrix::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            let x = self.solve(&b.column(j));
            for (i, v) in x.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        out
    }

    pub fn inverse(&self) -> Matrix<T> {
        let inv = self.solve_matrix(&Matrix::identity(self.dim()));
        inv.symmetrized()
    }

    pub fn log_det(&self) -> T {
        (0..self.dim()).map(|i| self.l[(i, i)].ln()).sum::<T>() * T::lit(2.0)
    }

    /// `xᵀ A⁻¹ x`, via the forward solve only.
    pub fn inv_quad_form(&self, x: &[T]) -> T {
        let n = self.dim();
        let mut y = x.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[(i, k)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y.iter().map(|&v| v * v).sum()
    }
}

/// `log det A`, or `-inf` when `A` is not numerically positive definite.
pub fn log_det_or_neg_inf<T: Real>(a: &Matrix<T>) -> T {
    match Cholesky::new(a) {
        Some(c) => c.log_det(),
        None => T::neg_infinity(),
    }
}

/// Eigendecomposition of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymmetricEigen<T: Real> {
    /// Ascending eigenvalues.
    pub values: Vec<T>,
    /// Column `k` is the unit eigenvector for `values[k]`.
    pub vectors: Matrix<T>,
}

impl<T: Real> SymmetricEigen<T> {
    /// Cyclic Jacobi rotations on the symmetrized input.
    pub fn new(a: &Matrix<T>) -> Self {
        assert!(a.is_square(), "eigendecomposition of non-square matrix");
        let n = a.rows();
        let mut m = a.symmetrized();
        let mut v = Matrix::identity(n);
        let scale = m.max_abs().max(T::min_positive_value());
        let tiny = T::epsilon() * T::epsilon() * scale * scale;

        for _sweep in 0..100 {
            let mut off = T::zero();
            for i in 0..n {
                for j in (i + 1)..n {
                    off += m[(i, j)] * m[(i, j)];
                }
            }
            if off <= tiny {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = m[(p, q)];
                    if apq == T::zero() {
                        continue;
                    }
                    let app = m[(p, p)];
                    let aqq = m[(q, q)];
                    let theta = (aqq - app) / (T::lit(2.0) * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let c = T::one() / (t * t + T::one()).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let mkp = m[(k, p)];
                        let mkq = m[(k, q)];
                        m[(k, p)] = c * mkp - s * mkq;
                        m[(k, q)] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let mpk = m[(p, k)];
                        let mqk = m[(q, k)];
                        m[(p, k)] = c * mpk - s * mqk;
                        m[(q, k)] = s * mpk + c * mqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| m[(i, i)].partial_cmp(&m[(j, j)]).unwrap_or(std::cmp::Ordering::Equal));
        let values = order.iter().map(|&i| m[(i, i)]).collect();
        let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
        SymmetricEigen { values, vectors }
    }

    pub fn min(&self) -> T {
        self.values.first().copied().unwrap_or_else(T::zero)
    }

    pub fn max(&self) -> T {
        self.values.last().copied().unwrap_or_else(T::zero)
    }

    pub fn vector(&self, k: usize) -> Vec<T> {
        self.vectors.column(k)
    }

    /// `V diag(f(λ)) Vᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(T) -> T) -> Matrix<T> {
        let n = self.values.len();
        let mapped: Vec<T> = self.values.iter().map(|&l| f(l)).collect();
        Matrix::from_fn(n, n, |i, j| {
            (0..n).fold(T::zero(), |acc, k| {
                acc + self.vectors[(i, k)] * mapped[k] * self.vectors[(j, k)]
            })
        })
    }
}

pub fn min_eigenvalue<T: Real>(a: &Matrix<T>) -> T {
    SymmetricEigen::new(a).min()
}

/// Spectral norm of a symmetric matrix.
pub fn sym_operator_norm<T: Real>(a: &Matrix<T>) -> T {
    let e = SymmetricEigen::new(a);
    e.min().abs().max(e.max().abs())
}

/// Nearest PSD matrix in Frobenius norm: negative eigenvalues clipped to zero.
pub fn psd_projection<T: Real>(a: &Matrix<T>) -> Matrix<T> {
    SymmetricEigen::new(a)
        .reconstruct_with(|l| l.max(T::zero()))
        .symmetrized()
}

/// Numerical rank of a symmetric PSD matrix, relative to its largest eigenvalue.
pub fn psd_rank<T: Real>(a: &Matrix<T>, rel_tol: T) -> usize {
    let e = SymmetricEigen::new(a);
    let cutoff = e.max().abs() * rel_tol;
    e.values.iter().filter(|&&l| l > cutoff).count()
}

/// SPD factorization with jitter escalation.
///
/// Tries `A`, then `A + j I` for `j = floor, 10·floor, …` up to `1e-5 · max(1, trace/n)`.
/// Returns the factor and the jitter that was applied.
pub fn cholesky_with_jitter<T: Real>(a: &Matrix<T>, context: &str) -> Result<(Cholesky<T>, T)> {
    if let Some(c) = Cholesky::new(a) {
        return Ok((c, T::zero()));
    }
    let n = a.rows().max(1);
    let scale = (a.trace() / T::from_count(n)).abs().max(T::one());
    let ceiling = T::lit(1e-5) * scale;
    let mut jitter = T::tol(1e-12) * scale;
    while jitter <= ceiling * T::lit(1.000001) {
        let mut b = a.clone();
        b.add_diag(jitter);
        if let Some(c) = Cholesky::new(&b) {
            return Ok((c, jitter));
        }
        jitter *= T::lit(10.0);
    }
    let eig = SymmetricEigen::new(a);
    Err(Error::Singular {
        context: context.to_string(),
        direction: eig.vector(0).iter().map(|v| v.as_f64()).collect(),
    })
}

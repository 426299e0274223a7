//! Small dense matrices.
//!
//! Every matrix in this crate is tiny (fiber dimension N <= 8, base dimension
//! n <= 2), so a row-major `Vec` with direct loops beats any BLAS dispatch.

use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use crate::scalar::Real;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_diag(diag: &[T]) -> Self {
        let n = diag.len();
        Self::from_fn(n, n, |i, j| if i == j { diag[i] } else { T::zero() })
    }

    /// Builds from row-major data. Panics if the length does not match.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data length");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[&[T]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        Self::from_fn(r, c, |i, j| rows[i][j])
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
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs[(k, j)];
                }
            }
        }
        out
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// `tr(self * other)` without forming the product.
    pub fn trace_of_product(&self, other: &Self) -> T {
        assert_eq!((self.cols, self.rows), (other.rows, other.cols));
        let mut acc = T::zero();
        for i in 0..self.rows {
            for k in 0..self.cols {
                acc += self[(i, k)] * other[(k, i)];
            }
        }
        acc
    }

    /// Frobenius inner product `sum_ij a_ij b_ij`.
    pub fn dot(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `max |a_ij - a_ji|`
    pub fn asymmetry(&self) -> T {
        let mut m = T::zero();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                m = m.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        m
    }

    pub fn symmetrized(&self) -> Self {
        let half = T::lit(0.5);
        Self::from_fn(self.rows, self.cols, |i, j| {
            if i == j {
                self[(i, i)]
            } else {
                half * (self[(i, j)] + self[(j, i)])
            }
        })
    }

    /// Lower Cholesky factor, `None` unless the matrix is numerically positive definite.
    pub fn cholesky(&self) -> Option<Cholesky<T>> {
        Cholesky::new(self)
    }
}

impl<T> Index<(usize, usize)> for Mat<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Mat<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

impl<'a, T: Real> Add<&'a Mat<T>> for &'a Mat<T> {
    type Output = Mat<T>;

    fn add(self, rhs: &'a Mat<T>) -> Mat<T> {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        }
    }
}

impl<'a, T: Real> Sub<&'a Mat<T>> for &'a Mat<T> {
    type Output = Mat<T>;

    fn sub(self, rhs: &'a Mat<T>) -> Mat<T> {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| a - b)
                .collect(),
        }
    }
}

impl<'a, T: Real> Mul<&'a Mat<T>> for &'a Mat<T> {
    type Output = Mat<T>;

    fn mul(self, rhs: &'a Mat<T>) -> Mat<T> {
        self.matmul(rhs)
    }
}

impl<T: Real> Neg for &Mat<T> {
    type Output = Mat<T>;

    fn neg(self) -> Mat<T> {
        self.scaled(-T::one())
    }
}

/// Cholesky factorization `A = L L^T`.
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    l: Mat<T>,
}

impl<T: Real> Cholesky<T> {
    pub fn new(a: &Mat<T>) -> Option<Self> {
        if !a.is_square() || a.rows() == 0 {
            return None;
        }
        let n = a.rows();
        let mut l = Mat::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return None;
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Some(Self { l })
    }

    pub fn lower(&self) -> &Mat<T> {
        &self.l
    }

    pub fn det(&self) -> T {
        let p: T = (0..self.l.rows())
            .map(|i| self.l[(i, i)])
            .fold(T::one(), |acc, x| acc * x);
        p * p
    }

    /// Solves `A x = b` for one right-hand side.
    pub fn solve_vec(&self, b: &[T]) -> Vec<T> {
        let n = self.l.rows();
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                let v = self.l[(i, k)] * y[k];
                y[i] -= v;
            }
            y[i] /= self.l[(i, i)];
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let v = self.l[(k, i)] * y[k];
                y[i] -= v;
            }
            y[i] /= self.l[(i, i)];
        }
        y
    }

    /// Symmetric inverse `A^{-1}`.
    pub fn inverse(&self) -> Mat<T> {
        let n = self.l.rows();
        let mut inv = Mat::zeros(n, n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = T::zero());
            e[j] = T::one();
            let col = self.solve_vec(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv.symmetrized()
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching orthonormal
/// eigenvectors as columns.
pub fn sym_eigen<T: Real>(a: &Mat<T>) -> (Vec<T>, Mat<T>) {
    assert!(a.is_square(), "sym_eigen needs a square matrix");
    let n = a.rows();
    let mut m = a.symmetrized();
    let mut v = Mat::identity(n);
    let scale = m.max_abs();
    if scale == T::zero() {
        return (vec![T::zero(); n], v);
    }
    for _sweep in 0..100 {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(m[(p, q)].abs());
            }
        }
        if off <= T::epsilon() * T::lit(1e-2) * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (T::lit(2.0) * apq);
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
    order.sort_by(|&i, &j| {
        m[(i, i)]
            .partial_cmp(&m[(j, j)])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = Mat::from_fn(n, n, |r, c| v[(r, order[c])]);
    (values, vectors)
}

/// `V f(Lambda) V^T` for symmetric input.
pub fn sym_apply<T: Real>(a: &Mat<T>, f: impl Fn(T) -> T) -> Mat<T> {
    let (vals, vecs) = sym_eigen(a);
    let n = a.rows();
    let mut out = Mat::zeros(n, n);
    for (k, &lam) in vals.iter().enumerate() {
        let fl = f(lam);
        for i in 0..n {
            let vik = vecs[(i, k)] * fl;
            for j in 0..n {
                out[(i, j)] += vik * vecs[(j, k)];
            }
        }
    }
    out.symmetrized()
}

/// Matrix exponential of a symmetric matrix.
pub fn sym_exp<T: Real>(a: &Mat<T>) -> Mat<T> {
    sym_apply(a, |x| x.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cholesky_inverse_and_det() {
        let a = Mat::from_rows(&[&[4.0, 2.0, 0.4], &[2.0, 3.0, 0.5], &[0.4, 0.5, 2.0]]);
        let ch = a.cholesky().unwrap();
        let inv = ch.inverse();
        let id = a.matmul(&inv);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(id[(i, j)], e, epsilon = 1e-14);
            }
        }
        // cofactor expansion
        let det = 4.0 * (3.0 * 2.0 - 0.25) - 2.0 * (2.0 * 2.0 - 0.5 * 0.4)
            + 0.4 * (2.0 * 0.5 - 3.0 * 0.4);
        assert_abs_diff_eq!(ch.det(), det, epsilon = 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Mat::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert!(a.cholesky().is_none());
        assert!(Mat::<f64>::zeros(2, 3).cholesky().is_none());
    }

    #[test]
    fn jacobi_reconstructs() {
        let a = Mat::from_rows(&[&[2.0, -1.0, 0.0], &[-1.0, 2.0, -1.0], &[0.0, -1.0, 2.0]]);
        let (vals, _) = sym_eigen(&a);
        let s2 = 2f64.sqrt();
        assert_abs_diff_eq!(vals[0], 2.0 - s2, epsilon = 1e-13);
        assert_abs_diff_eq!(vals[1], 2.0, epsilon = 1e-13);
        assert_abs_diff_eq!(vals[2], 2.0 + s2, epsilon = 1e-13);
        let back = sym_apply(&a, |x| x);
        assert!((&back - &a).max_abs() < 1e-13);
    }

    #[test]
    fn exp_of_diagonal() {
        let a = Mat::from_diag(&[0.5, -1.0]);
        let e = sym_exp(&a);
        assert_abs_diff_eq!(e[(0, 0)], 0.5f64.exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(e[(1, 1)], (-1f64).exp(), epsilon = 1e-15);
        assert_eq!(e[(0, 1)], 0.0);
    }
}

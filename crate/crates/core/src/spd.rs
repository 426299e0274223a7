//! Geometry of the cone of symmetric positive-definite matrices.
//!
//! Points are [`SpdMatrix`] values; tangent vectors are symmetric matrices
//! ([`TangentVector`]). The metric is the affine-invariant one,
//! `<X, Y>_G = tr(G^{-1} X G^{-1} Y)`, whose restriction to unit-determinant
//! matrices is the symmetric space `SL(N)/SO(N)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::{sym_eigen, Mat};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpdError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix dimension must be at least 1")]
    EmptyMatrix,
    #[error("matrix is not symmetric (asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("tangent vector is not trace-free at the base point (tr(G^-1 X) = {trace:e})")]
    NotTraceFree { trace: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

fn check_symmetric<T: Real>(m: &Mat<T>) -> Result<(), SpdError> {
    if !m.is_square() {
        return Err(SpdError::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    if m.rows() == 0 {
        return Err(SpdError::EmptyMatrix);
    }
    let scale = m.max_abs().max(T::min_positive_value());
    let asym = m.asymmetry();
    if !(asym <= T::symmetry_tol() * scale) {
        return Err(SpdError::NotSymmetric {
            asymmetry: asym.to_f64_lossy(),
        });
    }
    Ok(())
}

/// A symmetric positive-definite matrix with its inverse cached.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdMatrix<T> {
    entries: Mat<T>,
    inverse: Mat<T>,
    det: T,
}

impl<T: Real> SpdMatrix<T> {
    /// Validates symmetry (relative tolerance about 1e-14 in `f64`), symmetrizes,
    /// and checks positive-definiteness through a Cholesky factorization.
    pub fn new(entries: Mat<T>) -> Result<Self, SpdError> {
        check_symmetric(&entries)?;
        let entries = entries.symmetrized();
        let chol = entries.cholesky().ok_or(SpdError::NotPositiveDefinite)?;
        Ok(Self {
            inverse: chol.inverse(),
            det: chol.det(),
            entries,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            entries: Mat::identity(n),
            inverse: Mat::identity(n),
            det: T::one(),
        }
    }

    pub fn from_diag(diag: &[T]) -> Result<Self, SpdError> {
        Self::new(Mat::from_diag(diag))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.entries.rows()
    }

    #[inline]
    pub fn as_mat(&self) -> &Mat<T> {
        &self.entries
    }

    #[inline]
    pub fn inverse(&self) -> &Mat<T> {
        &self.inverse
    }

    #[inline]
    pub fn det(&self) -> T {
        self.det
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> Vec<T> {
        sym_eigen(&self.entries).0
    }

    pub fn condition_number(&self) -> T {
        let ev = self.eigenvalues();
        ev[ev.len() - 1] / ev[0]
    }

    pub fn into_mat(self) -> Mat<T> {
        self.entries
    }
}

/// A symmetric matrix viewed as a tangent vector to the SPD cone.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector<T> {
    entries: Mat<T>,
    trace_free: bool,
}

impl<T: Real> TangentVector<T> {
    pub fn new(entries: Mat<T>) -> Result<Self, SpdError> {
        check_symmetric(&entries)?;
        Ok(Self {
            entries: entries.symmetrized(),
            trace_free: false,
        })
    }

    /// Tangent vector to the unit-determinant slice at `base`: requires
    /// `tr(G^{-1} X) = 0` to within `1e-12` relative to `|G^{-1} X|`.
    pub fn trace_free_at(entries: Mat<T>, base: &SpdMatrix<T>) -> Result<Self, SpdError> {
        let mut v = Self::new(entries)?;
        ensure_dims(base.dim(), v.dim())?;
        let gx = base.inverse().matmul(&v.entries);
        let tr = gx.trace();
        let scale = gx.max_abs().max(T::one());
        if tr.abs() > T::lit(1e-12).max(T::symmetry_tol()) * scale {
            return Err(SpdError::NotTraceFree {
                trace: tr.to_f64_lossy(),
            });
        }
        v.trace_free = true;
        Ok(v)
    }

    pub fn zero(n: usize) -> Self {
        Self {
            entries: Mat::zeros(n, n),
            trace_free: true,
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.entries.rows()
    }

    #[inline]
    pub fn as_mat(&self) -> &Mat<T> {
        &self.entries
    }

    #[inline]
    pub fn is_trace_free(&self) -> bool {
        self.trace_free
    }

    pub fn into_mat(self) -> Mat<T> {
        self.entries
    }
}

fn ensure_dims(expected: usize, found: usize) -> Result<(), SpdError> {
    if expected != found {
        Err(SpdError::DimensionMismatch { expected, found })
    } else {
        Ok(())
    }
}

/// `tr(G^{-1} X G^{-1} Y)`
pub fn metric_at<T: Real>(
    base: &SpdMatrix<T>,
    x: &TangentVector<T>,
    y: &TangentVector<T>,
) -> Result<T, SpdError> {
    ensure_dims(base.dim(), x.dim())?;
    ensure_dims(base.dim(), y.dim())?;
    Ok(metric_raw(base.inverse(), x.as_mat(), y.as_mat()))
}

#[inline]
pub(crate) fn metric_raw<T: Real>(g_inv: &Mat<T>, x: &Mat<T>, y: &Mat<T>) -> T {
    let a = g_inv.matmul(x);
    let b = g_inv.matmul(y);
    a.trace_of_product(&b)
}

/// Christoffel operation of the affine-invariant metric,
/// `Gamma_G(X, Y) = -1/2 (X G^{-1} Y + Y G^{-1} X)`.
///
/// With this sign convention geodesics satisfy `G'' + Gamma_G(G', G') = 0`.
pub fn christoffel<T: Real>(
    base: &SpdMatrix<T>,
    x: &TangentVector<T>,
    y: &TangentVector<T>,
) -> Result<TangentVector<T>, SpdError> {
    ensure_dims(base.dim(), x.dim())?;
    ensure_dims(base.dim(), y.dim())?;
    Ok(TangentVector {
        entries: christoffel_with_inverse(base.inverse(), x.as_mat(), y.as_mat()),
        trace_free: false,
    })
}

/// [`christoffel`] on raw matrices, given `G⁻¹` directly.
#[inline]
pub fn christoffel_with_inverse<T: Real>(g_inv: &Mat<T>, x: &Mat<T>, y: &Mat<T>) -> Mat<T> {
    let xgy = x.matmul(g_inv).matmul(y);
    let ygx = xgy.transpose();
    (&xgy + &ygx).scaled(-T::lit(0.5))
}

/// Rescales `G` to unit determinant: `G / det(G)^{1/N}`.
pub fn project_unit_det<T: Real>(base: &SpdMatrix<T>) -> SpdMatrix<T> {
    let n = T::from_usize_lossy(base.dim());
    // det^{1/N} through logs keeps large N away from overflow
    let log_scale = base.det().ln() / n;
    let inv_scale = (-log_scale).exp();
    let entries = base.as_mat().scaled(inv_scale);
    let inverse = base.inverse().scaled(log_scale.exp());
    let det = entries
        .cholesky()
        .map(|c| c.det())
        .unwrap_or_else(|| T::one());
    SpdMatrix {
        entries,
        inverse,
        det,
    }
}

/// Removes the trace part of `X` at `G`: `X - tr(G^{-1}X)/N * G`.
pub fn project_trace_free<T: Real>(
    base: &SpdMatrix<T>,
    x: &TangentVector<T>,
) -> Result<TangentVector<T>, SpdError> {
    ensure_dims(base.dim(), x.dim())?;
    let n = T::from_usize_lossy(base.dim());
    let tr = base.inverse().trace_of_product(x.as_mat());
    let mut out = x.as_mat().clone();
    out.axpy(-tr / n, base.as_mat());
    TangentVector::trace_free_at(out.symmetrized(), base)
}

/// Seeded random SPD matrix with condition number at most `cond_max`.
///
/// Eigenvalues are log-uniform in `[1, cond_max]`; eigenvectors come from a
/// Gram-Schmidt orthonormalization of a uniform random matrix. The stream is
/// ChaCha8, so output is identical on every platform.
pub fn random_spd<T: Real>(seed: u64, n: usize, cond_max: T) -> Result<SpdMatrix<T>, SpdError> {
    if n == 0 {
        return Err(SpdError::EmptyMatrix);
    }
    if !(cond_max >= T::one()) || !cond_max.is_finite() {
        return Err(SpdError::InvalidParameter(format!(
            "cond_max must be finite and >= 1, got {cond_max}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = random_orthogonal(&mut rng, n);
    let log_c = cond_max.to_f64_lossy().ln();
    let mut lam: Vec<f64> = (0..n).map(|_| (rng.gen::<f64>() * log_c).exp()).collect();
    // pin the extremes so the spread is deterministic and within bounds
    if n > 1 {
        lam[0] = 1.0;
    }
    let mut m = Mat::<f64>::zeros(n, n);
    for (k, &l) in lam.iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] += q[(i, k)] * l * q[(j, k)];
            }
        }
    }
    let m = Mat::from_fn(n, n, |i, j| T::lit(m[(i, j)])).symmetrized();
    SpdMatrix::new(m)
}

fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Mat<f64> {
    loop {
        let mut cols: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut ok = true;
        for k in 0..n {
            for j in 0..k {
                let d: f64 = (0..n).map(|i| cols[k][i] * cols[j][i]).sum();
                let cj = cols[j].clone();
                for (ck, c) in cols[k].iter_mut().zip(&cj) {
                    *ck -= d * c;
                }
            }
            let norm: f64 = cols[k].iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            cols[k].iter_mut().for_each(|x| *x /= norm);
        }
        if ok {
            return Mat::from_fn(n, n, |i, j| cols[j][i]);
        }
    }
}

/// Seeded random symmetric matrix with entries uniform in `[-scale, scale]`.
pub fn random_symmetric<T: Real>(rng: &mut impl Rng, n: usize, scale: T) -> Mat<T> {
    let mut m = Mat::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = T::lit(rng.gen_range(-1.0..1.0)) * scale;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{sym_apply, sym_exp};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn tv(rows: &[&[f64]]) -> TangentVector<f64> {
        TangentVector::new(Mat::from_rows(rows)).unwrap()
    }

    #[test]
    fn metric_identity_base() {
        let g = SpdMatrix::<f64>::identity(2);
        let x = tv(&[&[1.0, 0.0], &[0.0, -1.0]]);
        assert_eq!(metric_at(&g, &x, &x).unwrap(), 2.0);
    }

    #[test]
    fn metric_diagonal_base() {
        // tr((G^{-1}X)^2) with G^{-1}X = diag(1/2, -2) -> 1/4 + 4
        let g = SpdMatrix::from_diag(&[2.0, 0.5]).unwrap();
        let x = tv(&[&[1.0, 0.0], &[0.0, -1.0]]);
        assert_abs_diff_eq!(metric_at(&g, &x, &x).unwrap(), 17.0 / 4.0, epsilon = 1e-15);
    }

    #[test]
    fn metric_zero_vector() {
        let g = random_spd::<f64>(3, 3, 10.0).unwrap();
        let z = TangentVector::zero(3);
        let x = TangentVector::new(g.as_mat().clone()).unwrap();
        assert_eq!(metric_at(&g, &z, &x).unwrap(), 0.0);
    }

    #[test]
    fn metric_rejects_mismatch() {
        let g = SpdMatrix::<f64>::identity(2);
        let x = TangentVector::zero(3);
        assert_eq!(
            metric_at(&g, &x, &x),
            Err(SpdError::DimensionMismatch {
                expected: 2,
                found: 3
            })
        );
        assert!(christoffel(&g, &x, &x).is_err());
    }

    #[test]
    fn construction_checks() {
        assert_eq!(
            SpdMatrix::new(Mat::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]])),
            Err(SpdError::NotPositiveDefinite)
        );
        assert!(matches!(
            SpdMatrix::new(Mat::from_rows(&[&[1.0, 0.1], &[0.0, 1.0]])),
            Err(SpdError::NotSymmetric { .. })
        ));
        // sub-tolerance asymmetry is absorbed
        let g = SpdMatrix::new(Mat::from_rows(&[&[1.0, 0.1], &[0.1 + 1e-17, 1.0]])).unwrap();
        assert_eq!(g.as_mat().asymmetry(), 0.0);
        assert_eq!(
            SpdMatrix::<f64>::new(Mat::zeros(0, 0)),
            Err(SpdError::EmptyMatrix)
        );
    }

    #[test]
    fn trace_free_flag() {
        let g = SpdMatrix::from_diag(&[2.0, 0.5]).unwrap();
        // tr(G^{-1}X) = 1/2 * 1 + 2 * (-1/4) = 0
        let x = TangentVector::trace_free_at(Mat::from_diag(&[1.0, -0.25]), &g).unwrap();
        assert!(x.is_trace_free());
        assert!(matches!(
            TangentVector::trace_free_at(Mat::from_diag(&[1.0, -1.0]), &g),
            Err(SpdError::NotTraceFree { .. })
        ));
        let p = project_trace_free(&g, &tv(&[&[1.0, 0.3], &[0.3, 2.0]])).unwrap();
        assert!(p.is_trace_free());
    }

    #[test]
    fn christoffel_identity_base() {
        let g = SpdMatrix::<f64>::identity(3);
        let i = TangentVector::new(Mat::identity(3)).unwrap();
        let out = christoffel(&g, &i, &i).unwrap();
        assert_eq!(out.as_mat(), &Mat::identity(3).scaled(-1.0));
        let z = TangentVector::zero(3);
        assert_eq!(christoffel(&g, &z, &i).unwrap().as_mat().max_abs(), 0.0);
    }

    /// Geodesic through G0 with initial velocity X, built from the matrix
    /// exponential, independent of the Christoffel formula.
    fn geodesic(g0: &SpdMatrix<f64>, x: &Mat<f64>, u: f64) -> Mat<f64> {
        let half = sym_apply(g0.as_mat(), |l| l.sqrt());
        let half_inv = sym_apply(g0.as_mat(), |l| 1.0 / l.sqrt());
        let inner = half_inv.matmul(x).matmul(&half_inv).scaled(u);
        half.matmul(&sym_exp(&inner)).matmul(&half)
    }

    #[test]
    fn geodesic_residual_oracle() {
        for seed in 0..4u64 {
            let g0 = random_spd::<f64>(seed, 3, 20.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let x = random_symmetric(&mut rng, 3, 1.0);
            let u0 = 0.3;
            let h = 1e-2;
            let at = |k: f64| geodesic(&g0, &x, u0 + k * h);
            let (m2, m1, c, p1, p2) = (at(-2.0), at(-1.0), at(0.0), at(1.0), at(2.0));
            let d1 = Mat::from_fn(3, 3, |i, j| {
                (-p2[(i, j)] + 8.0 * p1[(i, j)] - 8.0 * m1[(i, j)] + m2[(i, j)]) / (12.0 * h)
            });
            let d2 = Mat::from_fn(3, 3, |i, j| {
                (-p2[(i, j)] + 16.0 * p1[(i, j)] - 30.0 * c[(i, j)] + 16.0 * m1[(i, j)]
                    - m2[(i, j)])
                    / (12.0 * h * h)
            });
            let gc = SpdMatrix::new(c.symmetrized()).unwrap();
            let v = TangentVector::new(d1.symmetrized()).unwrap();
            let gamma = christoffel(&gc, &v, &v).unwrap();
            let residual = (&d2 + gamma.as_mat()).max_abs() / d2.max_abs().max(1.0);
            assert!(
                residual <= 1e-8,
                "seed {seed}: geodesic residual {residual:e}"
            );
            // the opposite sign must fail the same oracle
            let wrong = (&d2 - gamma.as_mat()).max_abs() / d2.max_abs().max(1.0);
            assert!(wrong > 1e-3);
        }
    }

    #[test]
    fn unit_det_projection() {
        let g = SpdMatrix::<f64>::identity(2);
        assert_eq!(project_unit_det(&g).as_mat(), &Mat::identity(2));
        let p = project_unit_det(&SpdMatrix::from_diag(&[4.0, 1.0]).unwrap());
        assert_abs_diff_eq!(p.as_mat()[(0, 0)], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.as_mat()[(1, 1)], 0.5, epsilon = 1e-15);
        for seed in 0..10 {
            let g = random_spd::<f64>(seed, 4, 50.0).unwrap();
            let p = project_unit_det(&g);
            let det = p.as_mat().cholesky().unwrap().det();
            assert_abs_diff_eq!(det, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn random_spd_is_deterministic_and_bounded() {
        let a = random_spd::<f64>(42, 5, 100.0).unwrap();
        let b = random_spd::<f64>(42, 5, 100.0).unwrap();
        assert_eq!(a, b);
        assert!(a.condition_number() <= 100.0 * (1.0 + 1e-10));
        assert!(random_spd::<f64>(1, 0, 2.0).is_err());
        assert!(random_spd::<f64>(1, 2, 0.5).is_err());
        let one = random_spd::<f64>(9, 1, 7.0).unwrap();
        assert!(one.as_mat()[(0, 0)] >= 1.0 && one.as_mat()[(0, 0)] <= 7.0);
    }

    #[test]
    fn works_in_single_precision() {
        let g = SpdMatrix::<f32>::from_diag(&[2.0, 0.5]).unwrap();
        let x = TangentVector::new(Mat::from_diag(&[1.0f32, -1.0])).unwrap();
        assert!((metric_at(&g, &x, &x).unwrap() - 4.25).abs() < 1e-6);
    }

    fn arb_triple() -> impl Strategy<Value = (SpdMatrix<f64>, Mat<f64>, Mat<f64>)> {
        (any::<u64>(), 1usize..=5).prop_map(|(seed, n)| {
            let g = random_spd(seed, n, 30.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let x = random_symmetric(&mut rng, n, 2.0);
            let y = random_symmetric(&mut rng, n, 2.0);
            (g, x, y)
        })
    }

    proptest! {
        #[test]
        fn metric_symmetric((g, x, y) in arb_triple()) {
            let x = TangentVector::new(x).unwrap();
            let y = TangentVector::new(y).unwrap();
            let a = metric_at(&g, &x, &y).unwrap();
            let b = metric_at(&g, &y, &x).unwrap();
            prop_assert!((a - b).abs() <= 1e-13 * a.abs().max(b.abs()).max(1.0));
        }

        #[test]
        fn metric_positive((g, x, _y) in arb_triple()) {
            prop_assume!(x.max_abs() > 1e-6);
            let x = TangentVector::new(x).unwrap();
            prop_assert!(metric_at(&g, &x, &x).unwrap() > 0.0);
        }

        #[test]
        fn christoffel_symmetric_bilinear((g, x, y) in arb_triple(), a in -3.0f64..3.0) {
            let xv = TangentVector::new(x.clone()).unwrap();
            let yv = TangentVector::new(y.clone()).unwrap();
            let xy = christoffel(&g, &xv, &yv).unwrap();
            let yx = christoffel(&g, &yv, &xv).unwrap();
            prop_assert!((xy.as_mat() - yx.as_mat()).max_abs() <= 1e-13 * xy.as_mat().max_abs().max(1.0));
            prop_assert_eq!(xy.as_mat().asymmetry(), 0.0);
            let ax = TangentVector::new(x.scaled(a)).unwrap();
            let axy = christoffel(&g, &ax, &yv).unwrap();
            let lin = xy.as_mat().scaled(a);
            prop_assert!((axy.as_mat() - &lin).max_abs() <= 1e-12 * lin.max_abs().max(1.0));
        }

        #[test]
        fn unit_det_idempotent(seed in any::<u64>(), n in 1usize..=6) {
            let g = random_spd::<f64>(seed, n, 40.0).unwrap();
            let p = project_unit_det(&g);
            let pp = project_unit_det(&p);
            prop_assert!((p.as_mat() - pp.as_mat()).max_abs() <= 1e-12 * p.as_mat().max_abs());
        }
    }
}

//! Periodic tensor-product grids and fourth-order central differences.

use crate::linalg::Mat;
use crate::scalar::Real;

use super::RrfsError;

pub const MIN_POINTS: usize = 8;

/// Flat periodic base `𝕋ⁿ` sampled at `x_i = i h` along each axis.
///
/// Node `k` has multi-index `(k % size₀, k / size₀)` for `n = 2`, so axis 0
/// varies fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicGrid<T> {
    sizes: Vec<usize>,
    spacing: Vec<T>,
}

impl<T: Real> PeriodicGrid<T> {
    pub fn new(sizes: Vec<usize>, spacing: Vec<T>) -> Result<Self, RrfsError> {
        if sizes.is_empty() || sizes.len() > 2 {
            return Err(RrfsError::InvalidGrid(format!(
                "base dimension must be 1 or 2, got {}",
                sizes.len()
            )));
        }
        if sizes.len() != spacing.len() {
            return Err(RrfsError::InvalidGrid(
                "sizes and spacings differ in length".into(),
            ));
        }
        if let Some(&s) = sizes.iter().find(|&&s| s < MIN_POINTS) {
            return Err(RrfsError::InvalidGrid(format!(
                "each axis needs at least {MIN_POINTS} points, got {s}"
            )));
        }
        if spacing.iter().any(|&h| !(h > T::zero()) || !h.is_finite()) {
            return Err(RrfsError::InvalidGrid(
                "spacing must be positive and finite".into(),
            ));
        }
        Ok(Self { sizes, spacing })
    }

    /// Grid with `size` points per axis on a square torus of side `period`.
    pub fn uniform(n_base: usize, size: usize, period: T) -> Result<Self, RrfsError> {
        let h = period / T::from_usize_lossy(size);
        Self::new(vec![size; n_base], vec![h; n_base])
    }

    pub fn n_base(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn spacing(&self) -> &[T] {
        &self.spacing
    }

    pub fn period(&self, axis: usize) -> T {
        self.spacing[axis] * T::from_usize_lossy(self.sizes[axis])
    }

    pub fn len(&self) -> usize {
        self.sizes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn h_min(&self) -> T {
        self.spacing.iter().copied().fold(T::infinity(), T::min)
    }

    /// Volume element `∏ h` of one cell.
    pub fn cell_volume(&self) -> T {
        self.spacing.iter().copied().fold(T::one(), |a, b| a * b)
    }

    pub fn multi_index(&self, k: usize) -> [usize; 2] {
        let s0 = self.sizes[0];
        [k % s0, k / s0]
    }

    pub fn coords(&self, k: usize) -> [T; 2] {
        let [i, j] = self.multi_index(k);
        let y = if self.n_base() > 1 {
            T::from_usize_lossy(j) * self.spacing[1]
        } else {
            T::zero()
        };
        [T::from_usize_lossy(i) * self.spacing[0], y]
    }

    /// Index of the node `offset` steps away from `k` along `axis`, wrapping.
    pub fn shift(&self, k: usize, axis: usize, offset: isize) -> usize {
        let [i, j] = self.multi_index(k);
        let m = self.sizes[axis] as isize;
        let wrap = |v: usize| ((v as isize + offset).rem_euclid(m)) as usize;
        match axis {
            0 => wrap(i) + self.sizes[0] * j,
            _ => i + self.sizes[0] * wrap(j),
        }
    }

    fn check_axis(&self, axis: usize) -> Result<(), RrfsError> {
        if axis >= self.n_base() {
            Err(RrfsError::AxisOutOfRange {
                axis,
                n_base: self.n_base(),
            })
        } else {
            Ok(())
        }
    }
}

/// Values a stencil can act on.
pub trait FieldValue<T>: Clone {
    fn zero_like(&self) -> Self;
    fn add_scaled(&mut self, w: T, other: &Self);
}

impl<T: Real> FieldValue<T> for T {
    fn zero_like(&self) -> Self {
        T::zero()
    }

    fn add_scaled(&mut self, w: T, other: &Self) {
        *self += w * *other;
    }
}

impl<T: Real> FieldValue<T> for Mat<T> {
    fn zero_like(&self) -> Self {
        Mat::zeros(self.rows(), self.cols())
    }

    fn add_scaled(&mut self, w: T, other: &Self) {
        self.axpy(w, other);
    }
}

fn apply_stencil<T: Real, V: FieldValue<T>>(
    field: &[V],
    axis: usize,
    grid: &PeriodicGrid<T>,
    weights: &[(isize, T)],
) -> Vec<V> {
    (0..field.len())
        .map(|k| {
            let mut acc = field[k].zero_like();
            for &(off, w) in weights {
                acc.add_scaled(w, &field[grid.shift(k, axis, off)]);
            }
            acc
        })
        .collect()
}

fn check_len<T: Real, V>(field: &[V], grid: &PeriodicGrid<T>) -> Result<(), RrfsError> {
    if field.len() != grid.len() {
        return Err(RrfsError::DimensionMismatch(format!(
            "field has {} nodes, grid has {}",
            field.len(),
            grid.len()
        )));
    }
    Ok(())
}

/// `∂/∂x^axis` by the periodic five-point stencil
/// `(-f₊₂ + 8f₊₁ - 8f₋₁ + f₋₂) / 12h`.
pub fn d_central<T: Real, V: FieldValue<T>>(
    field: &[V],
    axis: usize,
    grid: &PeriodicGrid<T>,
) -> Result<Vec<V>, RrfsError> {
    grid.check_axis(axis)?;
    check_len(field, grid)?;
    let h = grid.spacing[axis];
    let c1 = T::lit(8.0) / (T::lit(12.0) * h);
    let c2 = T::one() / (T::lit(12.0) * h);
    Ok(apply_stencil(
        field,
        axis,
        grid,
        &[(1, c1), (-1, -c1), (2, -c2), (-2, c2)],
    ))
}

/// `∂²/∂x^a ∂x^b`. Repeated axes use
/// `(-f₊₂ + 16f₊₁ - 30f₀ + 16f₋₁ - f₋₂) / 12h²`; mixed ones apply [`d_central`] twice.
pub fn d2_central<T: Real, V: FieldValue<T>>(
    field: &[V],
    axis1: usize,
    axis2: usize,
    grid: &PeriodicGrid<T>,
) -> Result<Vec<V>, RrfsError> {
    grid.check_axis(axis1)?;
    grid.check_axis(axis2)?;
    check_len(field, grid)?;
    if axis1 != axis2 {
        let inner = d_central(field, axis2, grid)?;
        return d_central(&inner, axis1, grid);
    }
    let h = grid.spacing[axis1];
    let d = T::lit(12.0) * h * h;
    let w1 = T::lit(16.0) / d;
    let w2 = -T::one() / d;
    // written on differences f₊ - f₀ so constant fields give exactly zero
    Ok((0..field.len())
        .map(|k| {
            let f0 = &field[k];
            let mut acc = f0.zero_like();
            for (off, w) in [(1, w1), (-1, w1), (2, w2), (-2, w2)] {
                let mut diff = field[grid.shift(k, axis1, off)].clone();
                diff.add_scaled(-T::one(), f0);
                acc.add_scaled(w, &diff);
            }
            acc
        })
        .collect())
}

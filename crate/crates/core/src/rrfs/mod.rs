//! Method-of-lines solver for the rescaled locally ℝᴺ-invariant Ricci flow on
//! flat periodic bases.
//!
//! A state is a triple of fields on the base torus: the base metric
//! `g_{αβ}` (n×n SPD), the connection `A_α^i` (n×N) and the fiber metric
//! `G_{ij}` (N×N SPD). Spatial derivatives are fourth-order central
//! differences; time stepping reuses the adaptive integrator in [`crate::ode`].

mod fields;
mod flow;
mod grid;
mod ops;
mod snapshot;

pub use fields::{random_smooth_state, RandomFieldSpec};
pub use flow::{
    integrate_rrfs, rrfs_rhs, rrfs_rhs_terms, Diagnostics, FieldTriple, FlowMode, RhsTerms,
    RrfsRun, RrfsSystem, CFL_FACTOR,
};
pub use grid::{d2_central, d_central, FieldValue, PeriodicGrid, MIN_POINTS};
pub use ops::{
    christoffels_of_g, da_field, delta_da, energy_g, laplacian_g, r_density, ricci_tensor,
    s_volume, scalar_curvature, tension_g_general, tension_g_general_with, tension_g_simplified,
    volume, ChristoffelFn, Christoffels, ConnectionCurvature,
};
pub use snapshot::{read_snapshot, write_snapshot};

use thiserror::Error;

use crate::linalg::{Cholesky, Mat};
use crate::ode::OdeError;
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RrfsError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("axis {axis} out of range for a {n_base}-dimensional base")]
    AxisOutOfRange { axis: usize, n_base: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{field} is not symmetric positive definite at node {node}")]
    NotSpd { field: &'static str, node: usize },
    #[error("positivity lost at t = {t:e}: {detail}")]
    SpdLost { t: f64, detail: String },
    #[error("CFL step cap collapsed to {cap:e} at t = {t:e}")]
    CflCollapse { t: f64, cap: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("snapshot line {line}: {message}")]
    Snapshot { line: usize, message: String },
    #[error(transparent)]
    Integration(OdeError),
}

/// Fields `(g, A, G)` on a periodic grid, stored node-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RrfsState<T> {
    grid: PeriodicGrid<T>,
    fiber_dim: usize,
    /// Base metric `g_{αβ}`, n×n per node.
    pub g: Vec<Mat<T>>,
    /// Connection `A_α^i`, n×N per node (row α, column i).
    pub a: Vec<Mat<T>>,
    /// Fiber metric `G_{ij}`, N×N per node.
    pub fiber: Vec<Mat<T>>,
}

impl<T: Real> RrfsState<T> {
    pub fn new(
        grid: PeriodicGrid<T>,
        fiber_dim: usize,
        g: Vec<Mat<T>>,
        a: Vec<Mat<T>>,
        fiber: Vec<Mat<T>>,
    ) -> Result<Self, RrfsError> {
        if fiber_dim == 0 {
            return Err(RrfsError::InvalidParameter(
                "fiber dimension must be >= 1".into(),
            ));
        }
        let n = grid.n_base();
        let len = grid.len();
        let shape_ok = |f: &[Mat<T>], r: usize, c: usize| {
            f.len() == len && f.iter().all(|m| m.rows() == r && m.cols() == c)
        };
        if !shape_ok(&g, n, n)
            || !shape_ok(&a, n, fiber_dim)
            || !shape_ok(&fiber, fiber_dim, fiber_dim)
        {
            return Err(RrfsError::DimensionMismatch(format!(
                "expected {len} nodes of g {n}x{n}, A {n}x{fiber_dim}, G {fiber_dim}x{fiber_dim}"
            )));
        }
        let state = Self {
            grid,
            fiber_dim,
            g,
            a,
            fiber,
        };
        state.validate()?;
        Ok(state)
    }

    /// Flat metric, zero connection and constant fiber metric `G₀`.
    pub fn flat(grid: PeriodicGrid<T>, fiber0: &Mat<T>) -> Result<Self, RrfsError> {
        let n = grid.n_base();
        let len = grid.len();
        let fd = fiber0.rows();
        Self::new(
            grid,
            fd,
            vec![Mat::identity(n); len],
            vec![Mat::zeros(n, fd); len],
            vec![fiber0.clone(); len],
        )
    }

    pub fn grid(&self) -> &PeriodicGrid<T> {
        &self.grid
    }

    pub fn n_base(&self) -> usize {
        self.grid.n_base()
    }

    pub fn fiber_dim(&self) -> usize {
        self.fiber_dim
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Checks symmetry and positive definiteness of `g` and `G` at every node.
    pub fn validate(&self) -> Result<(), RrfsError> {
        for (field, name) in [(&self.g, "g"), (&self.fiber, "G")] {
            for (k, m) in field.iter().enumerate() {
                let scale = m.max_abs().max(T::min_positive_value());
                let spd = m.is_finite()
                    && m.asymmetry() <= T::symmetry_tol() * scale
                    && Cholesky::new(m).is_some();
                if !spd {
                    return Err(RrfsError::NotSpd {
                        field: name,
                        node: k,
                    });
                }
            }
        }
        if self.a.iter().any(|m| !m.is_finite()) {
            return Err(RrfsError::InvalidParameter(
                "connection has non-finite entries".into(),
            ));
        }
        Ok(())
    }

    /// Entries per node in the flat layout: `n² + nN + N²`.
    pub fn node_width(&self) -> usize {
        let n = self.n_base();
        let f = self.fiber_dim;
        n * n + n * f + f * f
    }

    /// Node-major flattening `[g, A, G]` per node, each row-major.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.len() * self.node_width());
        for k in 0..self.len() {
            out.extend_from_slice(self.g[k].as_slice());
            out.extend_from_slice(self.a[k].as_slice());
            out.extend_from_slice(self.fiber[k].as_slice());
        }
        out
    }

    /// Same shape as `self`, filled from a flat vector; no validation.
    pub fn with_flat(&self, y: &[T]) -> Self {
        let n = self.n_base();
        let f = self.fiber_dim;
        let w = self.node_width();
        let mut g = Vec::with_capacity(self.len());
        let mut a = Vec::with_capacity(self.len());
        let mut fiber = Vec::with_capacity(self.len());
        for chunk in y.chunks_exact(w) {
            let (gs, rest) = chunk.split_at(n * n);
            let (as_, fs) = rest.split_at(n * f);
            g.push(Mat::from_row_major(n, n, gs.to_vec()));
            a.push(Mat::from_row_major(n, f, as_.to_vec()));
            fiber.push(Mat::from_row_major(f, f, fs.to_vec()));
        }
        Self {
            grid: self.grid.clone(),
            fiber_dim: f,
            g,
            a,
            fiber,
        }
    }

    /// Largest absolute entry difference against another state on the same grid.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.to_flat()
            .iter()
            .zip(other.to_flat())
            .map(|(a, b)| (*a - b).abs())
            .fold(T::zero(), T::max)
    }
}

/// How the rescaling function `s` is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RescalingMode<T> {
    /// `s ≡ 0`
    Off,
    Constant(T),
    /// `s` recomputed from the state so that the base volume is stationary.
    Volume,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RescalingSpec<T> {
    pub mode: RescalingMode<T>,
    /// The constant `c` multiplying `s` in the connection and fiber equations.
    pub c_coupling: T,
}

impl<T: Real> Default for RescalingSpec<T> {
    fn default() -> Self {
        Self {
            mode: RescalingMode::Off,
            c_coupling: T::zero(),
        }
    }
}

impl<T: Real> RescalingSpec<T> {
    pub fn volume() -> Self {
        Self {
            mode: RescalingMode::Volume,
            c_coupling: T::zero(),
        }
    }

    pub fn s_for(&self, state: &RrfsState<T>) -> Result<T, RrfsError> {
        match self.mode {
            RescalingMode::Off => Ok(T::zero()),
            RescalingMode::Constant(s0) => Ok(s0),
            RescalingMode::Volume => s_volume(state),
        }
    }
}

//! Numerical experiments for Ricci flow coupled to harmonic map flow.
//!
//! * [`spd`]: the cone of symmetric positive-definite matrices with its
//!   affine-invariant metric.
//! * [`ode`]: adaptive Dormand–Prince integration, fixed-step RK4 and
//!   convergence-order measurement.
//! * [`nil3`]: the diagonal flow on the Heisenberg group, its closed forms,
//!   bounds and asymptotic fits.
//! * [`rrfs`]: a method-of-lines solver for the locally ℝᴺ-invariant flow on
//!   flat periodic bases.
//! * [`io`]: CSV formats.
//!
//! Everything is generic over [`Real`] (`f32` or `f64`); the aliases below
//! fix `f64`.

// negated comparisons are how NaN gets rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod io;
pub mod linalg;
pub mod nil3;
pub mod ode;
pub mod rrfs;
pub mod scalar;
pub mod series;
pub mod spd;

pub use scalar::Real;

pub type Mat64 = linalg::Mat<f64>;
pub type SpdMatrix64 = spd::SpdMatrix<f64>;
pub type TangentVector64 = spd::TangentVector<f64>;
pub type IntegratorConfig64 = ode::IntegratorConfig<f64>;
pub type Trajectory64 = ode::Trajectory<f64>;
pub type Nil3State64 = nil3::Nil3State<f64>;
pub type Nil3Params64 = nil3::Nil3Params<f64>;
pub type CouplingSchedule64 = nil3::CouplingSchedule<f64>;
pub type AsymptoticFit64 = nil3::AsymptoticFit<f64>;
pub type PeriodicGrid64 = rrfs::PeriodicGrid<f64>;
pub type RrfsState64 = rrfs::RrfsState<f64>;
pub type RescalingSpec64 = rrfs::RescalingSpec<f64>;

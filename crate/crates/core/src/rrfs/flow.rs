//! Right-hand side of the rescaled flow and its time integration.

use std::ops::ControlFlow;

use crate::linalg::{sym_eigen, Mat};
use crate::ode::{integrate, IntegratorConfig, OdeError, OdeSystem, Sampling, StepStats};
use crate::scalar::Real;

use super::ops::{
    delta_da_with, energy_g, fiber_quadratic, laplacian_with, ricci_with, s_volume_with, volume,
    Geometry,
};
use super::{RescalingMode, RescalingSpec, RrfsError, RrfsState};

/// Step cap factor: `dt ≤ CFL_FACTOR · h_min² · min λ_min(g)`.
pub const CFL_FACTOR: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowMode {
    /// All three equations.
    Full,
    /// `g` and `A` frozen; only the fiber-metric equation evolves.
    HarmonicMapOnly,
}

/// Every printed term of the three evolution equations, evaluated separately.
#[derive(Clone, Debug, PartialEq)]
pub struct RhsTerms<T> {
    pub s: T,
    /// `-2 R_{αβ}`
    pub g_ricci: Vec<Mat<T>>,
    /// `½ tr(G⁻¹∂_αG G⁻¹∂_βG)`
    pub g_fiber: Vec<Mat<T>>,
    /// `g^{γδ} G_ij (dA)^i_{αγ} (dA)^j_{βδ}`
    pub g_connection: Vec<Mat<T>>,
    /// `-s g`
    pub g_rescale: Vec<Mat<T>>,
    /// `-(δdA)`
    pub a_delta: Vec<Mat<T>>,
    /// `g^{βγ} G^{ij} ∂_γG_{jk} (dA)^k_{βα}`
    pub a_fiber: Vec<Mat<T>>,
    /// `-((1 + c)/2) s A`
    pub a_rescale: Vec<Mat<T>>,
    /// `ΔG`
    pub fiber_laplacian: Vec<Mat<T>>,
    /// `-g^{αβ} ∂_αG G⁻¹ ∂_βG`
    pub fiber_quadratic: Vec<Mat<T>>,
    /// `-½ g^{αγ} g^{βδ} G_ik G_jℓ (dA)^k_{αβ} (dA)^ℓ_{γδ}`
    pub fiber_connection: Vec<Mat<T>>,
    /// `c s G`
    pub fiber_rescale: Vec<Mat<T>>,
}

fn sum_fields<T: Real>(parts: &[&Vec<Mat<T>>], symmetrize: bool) -> Vec<Mat<T>> {
    (0..parts[0].len())
        .map(|k| {
            let mut m = parts[0][k].clone();
            for p in &parts[1..] {
                m.axpy(T::one(), &p[k]);
            }
            if symmetrize {
                m.symmetrized()
            } else {
                m
            }
        })
        .collect()
}

impl<T: Real> RhsTerms<T> {
    pub fn dg(&self) -> Vec<Mat<T>> {
        sum_fields(
            &[
                &self.g_ricci,
                &self.g_fiber,
                &self.g_connection,
                &self.g_rescale,
            ],
            true,
        )
    }

    pub fn da(&self) -> Vec<Mat<T>> {
        sum_fields(&[&self.a_delta, &self.a_fiber, &self.a_rescale], false)
    }

    pub fn dfiber(&self) -> Vec<Mat<T>> {
        sum_fields(
            &[
                &self.fiber_laplacian,
                &self.fiber_quadratic,
                &self.fiber_connection,
                &self.fiber_rescale,
            ],
            true,
        )
    }
}

/// Evaluates all terms of the system at `state`.
pub fn rrfs_rhs_terms<T: Real>(
    state: &RrfsState<T>,
    spec: &RescalingSpec<T>,
) -> Result<RhsTerms<T>, RrfsError> {
    let geo = Geometry::new(state)?;
    let n = geo.n;
    let nf = geo.nf;
    let len = state.len();
    let ricci = ricci_with(state, &geo)?;
    let s = match spec.mode {
        RescalingMode::Off => T::zero(),
        RescalingMode::Constant(s0) => s0,
        RescalingMode::Volume => s_volume_with(state, &geo, &ricci),
    };
    let c = spec.c_coupling;
    let half = T::lit(0.5);

    let g_ricci = ricci.iter().map(|r| r.scaled(-T::lit(2.0))).collect();
    let mut g_fiber = Vec::with_capacity(len);
    let mut g_connection = Vec::with_capacity(len);
    let mut a_fiber = Vec::with_capacity(len);
    let mut fiber_connection = Vec::with_capacity(len);
    for k in 0..len {
        let p: Vec<Mat<T>> = (0..n)
            .map(|a| geo.fib_inv[k].matmul(&geo.dfib[a][k]))
            .collect();
        g_fiber.push(Mat::from_fn(n, n, |a, b| {
            half * p[a].trace_of_product(&p[b])
        }));

        let gi = &geo.ginv[k];
        let f = &geo.curv.f[k];
        let fib = &state.fiber[k];
        let mut gc = Mat::zeros(n, n);
        let mut af = Mat::zeros(n, nf);
        let mut fc = Mat::zeros(nf, nf);
        if n > 1 {
            for i in 0..nf {
                let fi_g = f[i].matmul(gi);
                for j in 0..nf {
                    gc.axpy(fib[(i, j)], &fi_g.matmul(&f[j].transpose()));
                }
            }
            for al in 0..n {
                for i in 0..nf {
                    let mut acc = T::zero();
                    for be in 0..n {
                        for ga in 0..n {
                            let w = gi[(be, ga)];
                            for kk in 0..nf {
                                acc += w * p[ga][(i, kk)] * f[kk][(be, al)];
                            }
                        }
                    }
                    af[(al, i)] = acc;
                }
            }
            let raised: Vec<Mat<T>> = f.iter().map(|fl| gi.matmul(fl).matmul(gi)).collect();
            let contraction = Mat::from_fn(nf, nf, |kk, l| f[kk].dot(&raised[l]));
            fc = fib.matmul(&contraction).matmul(fib).scaled(-half);
        }
        g_connection.push(gc);
        a_fiber.push(af);
        fiber_connection.push(fc);
    }
    let a_delta = delta_da_with(state, &geo)?
        .into_iter()
        .map(|m| m.scaled(-T::one()))
        .collect();
    let fiber_quadratic = (0..len)
        .map(|k| fiber_quadratic(&geo, k).scaled(-T::one()))
        .collect();
    let a_coef = -(T::one() + c) * half * s;
    Ok(RhsTerms {
        s,
        g_ricci,
        g_fiber,
        g_connection,
        g_rescale: state.g.iter().map(|g| g.scaled(-s)).collect(),
        a_delta,
        a_fiber,
        a_rescale: state.a.iter().map(|a| a.scaled(a_coef)).collect(),
        fiber_laplacian: laplacian_with(state, &geo)?,
        fiber_quadratic,
        fiber_connection,
        fiber_rescale: state.fiber.iter().map(|g| g.scaled(c * s)).collect(),
    })
}

/// `(dg, dA, dG)` node fields.
pub type FieldTriple<T> = (Vec<Mat<T>>, Vec<Mat<T>>, Vec<Mat<T>>);

/// Time derivative of the state as `(dg, dA, dG)`.
pub fn rrfs_rhs<T: Real>(
    state: &RrfsState<T>,
    spec: &RescalingSpec<T>,
    mode: FlowMode,
) -> Result<FieldTriple<T>, RrfsError> {
    let terms = rrfs_rhs_terms(state, spec)?;
    let dfib = terms.dfiber();
    match mode {
        FlowMode::Full => Ok((terms.dg(), terms.da(), dfib)),
        FlowMode::HarmonicMapOnly => {
            let n = state.n_base();
            let nf = state.fiber_dim();
            Ok((
                vec![Mat::zeros(n, n); state.len()],
                vec![Mat::zeros(n, nf); state.len()],
                dfib,
            ))
        }
    }
}

fn cfl_cap<T: Real>(state: &RrfsState<T>) -> T {
    let h = state.grid().h_min();
    let lam = state
        .g
        .iter()
        .map(|g| sym_eigen(g).0[0])
        .fold(T::infinity(), T::min);
    T::lit(CFL_FACTOR) * h * h * lam
}

/// [`OdeSystem`] over the flattened state, with an SPD guard and CFL step cap.
pub struct RrfsSystem<T> {
    template: RrfsState<T>,
    spec: RescalingSpec<T>,
    mode: FlowMode,
}

impl<T: Real> RrfsSystem<T> {
    pub fn new(template: RrfsState<T>, spec: RescalingSpec<T>, mode: FlowMode) -> Self {
        Self {
            template,
            spec,
            mode,
        }
    }

    pub fn state_of(&self, y: &[T]) -> RrfsState<T> {
        self.template.with_flat(y)
    }
}

impl<T: Real> OdeSystem<T> for RrfsSystem<T> {
    fn dim(&self) -> usize {
        self.template.len() * self.template.node_width()
    }

    fn rhs(&self, _t: T, y: &[T], dydt: &mut [T]) {
        let st = self.state_of(y);
        match rrfs_rhs(&st, &self.spec, self.mode) {
            Ok((dg, da, dfib)) => {
                let d = RrfsState {
                    grid: st.grid.clone(),
                    fiber_dim: st.fiber_dim,
                    g: dg,
                    a: da,
                    fiber: dfib,
                };
                dydt.copy_from_slice(&d.to_flat());
            }
            Err(_) => dydt.iter_mut().for_each(|v| *v = T::nan()),
        }
    }

    fn admissible(&self, _t: T, y: &[T]) -> Result<(), String> {
        self.state_of(y).validate().map_err(|e| e.to_string())
    }

    fn max_step(&self, _t: T, y: &[T]) -> Option<T> {
        Some(cfl_cap(&self.state_of(y)))
    }
}

/// Per-step record of the global quantities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diagnostics<T> {
    pub t: T,
    pub energy: T,
    pub volume: T,
    pub s: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RrfsRun<T> {
    /// States at the requested snapshot times (always including start and end).
    pub snapshots: Vec<(T, RrfsState<T>)>,
    /// One entry per accepted step, starting at `t = 0`.
    pub diagnostics: Vec<Diagnostics<T>>,
    pub stats: StepStats,
}

impl<T: Real> RrfsRun<T> {
    pub fn final_state(&self) -> &RrfsState<T> {
        &self.snapshots.last().expect("a run always has snapshots").1
    }
}

fn diagnostics<T: Real>(
    t: T,
    st: &RrfsState<T>,
    spec: &RescalingSpec<T>,
) -> Result<Diagnostics<T>, RrfsError> {
    Ok(Diagnostics {
        t,
        energy: energy_g(st)?,
        volume: volume(st)?,
        s: spec.s_for(st)?,
    })
}

/// Integrates from `t = 0` to `t_end` with the adaptive integrator.
pub fn integrate_rrfs<T: Real>(
    state0: &RrfsState<T>,
    spec: &RescalingSpec<T>,
    mode: FlowMode,
    t_end: T,
    cfg: &IntegratorConfig<T>,
    snapshot_times: &[T],
) -> Result<RrfsRun<T>, RrfsError> {
    state0.validate()?;
    if !(t_end >= T::zero()) || !t_end.is_finite() {
        return Err(RrfsError::InvalidParameter(format!(
            "t_end must be finite and >= 0, got {t_end}"
        )));
    }
    let sys = RrfsSystem::new(state0.clone(), *spec, mode);
    let floor = T::lit(1e-14) * t_end.max(T::one());
    let mut diag = Vec::new();
    let mut failure: Option<RrfsError> = None;
    let result = integrate(
        &sys,
        T::zero(),
        t_end,
        &state0.to_flat(),
        cfg,
        &Sampling::At(snapshot_times.to_vec()),
        |t, y| {
            let st = sys.state_of(y);
            let cap = cfl_cap(&st);
            if !(cap > floor) {
                failure = Some(RrfsError::CflCollapse {
                    t: t.to_f64_lossy(),
                    cap: cap.to_f64_lossy(),
                });
                return ControlFlow::Break("CFL collapse".into());
            }
            match diagnostics(t, &st, spec) {
                Ok(d) => {
                    diag.push(d);
                    ControlFlow::Continue(())
                }
                Err(e) => {
                    let msg = e.to_string();
                    failure = Some(e);
                    ControlFlow::Break(msg)
                }
            }
        },
    );
    let traj = match result {
        Ok(t) => t,
        Err(e) => {
            return Err(match (failure, e) {
                (Some(f), _) => f,
                (None, OdeError::PositivityLost { t, detail }) => RrfsError::SpdLost { t, detail },
                (None, e) => RrfsError::Integration(e),
            })
        }
    };
    Ok(RrfsRun {
        snapshots: traj
            .times
            .iter()
            .zip(&traj.states)
            .map(|(&t, y)| (t, sys.state_of(y)))
            .collect(),
        diagnostics: diag,
        stats: traj.stats,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{
        random_smooth_state, scalar_curvature, tension_g_simplified, PeriodicGrid, RandomFieldSpec,
    };
    use super::*;
    use std::f64::consts::PI;

    fn sup(field: &[Mat<f64>]) -> f64 {
        field.iter().map(|m| m.max_abs()).fold(0.0, f64::max)
    }

    #[test]
    fn flat_state_is_stationary() {
        let grid = PeriodicGrid::uniform(2, 8, 1.0).unwrap();
        let st = RrfsState::flat(grid, &Mat::from_rows(&[&[2.0, 0.5], &[0.5, 1.0]])).unwrap();
        let (dg, da, df) = rrfs_rhs(&st, &RescalingSpec::default(), FlowMode::Full).unwrap();
        assert_eq!(sup(&dg) + sup(&da) + sup(&df), 0.0);
    }

    #[test]
    fn one_dimensional_fiber_equation_is_the_tension() {
        let mut spec = RandomFieldSpec::new(1, 2, 32, 5);
        spec.connection_amplitude = 0.0;
        let st = random_smooth_state(&spec).unwrap();
        let (_, _, df) = rrfs_rhs(&st, &RescalingSpec::default(), FlowMode::Full).unwrap();
        let tau = tension_g_simplified(&st).unwrap();
        let diff: Vec<Mat<f64>> = df.iter().zip(&tau).map(|(a, b)| a - b).collect();
        assert!(sup(&diff) <= 1e-13 * sup(&tau));
    }

    #[test]
    fn manufactured_connection_terms() {
        let grid = PeriodicGrid::uniform(2, 32, 2.0 * PI).unwrap();
        let len = grid.len();
        let xs: Vec<f64> = (0..len).map(|k| grid.coords(k)[0]).collect();
        let st = RrfsState::new(
            grid,
            1,
            vec![Mat::identity(2); len],
            xs.iter()
                .map(|x| Mat::from_rows(&[&[0.0], &[x.sin()]]))
                .collect(),
            vec![Mat::identity(1); len],
        )
        .unwrap();
        let terms = rrfs_rhs_terms(&st, &RescalingSpec::default()).unwrap();
        for (k, x) in xs.iter().enumerate() {
            let c2 = x.cos().powi(2);
            let gc = &terms.g_connection[k];
            assert!((gc[(1, 1)] - c2).abs() < 1e-4);
            assert!((gc[(0, 0)] - c2).abs() < 1e-4);
            assert!(gc[(0, 1)].abs() < 1e-12);
            // both orderings of (α, β) contribute, so the full contraction gives -cos²x
            assert!((terms.fiber_connection[k][(0, 0)] + c2).abs() < 1e-4);
            assert!((terms.a_delta[k][(1, 0)] + x.sin()).abs() < 1e-4);
            assert!(terms.a_fiber[k].max_abs() < 1e-12);
        }
    }

    #[test]
    fn conformal_metric_reduces_to_ricci_flow() {
        // in 2D, Rc = (R/2) g, so -2 Rc - s g = -(R + s) g up to discretization
        let eps = 0.3;
        let grid = PeriodicGrid::uniform(2, 32, 2.0 * PI).unwrap();
        let len = grid.len();
        let g: Vec<Mat<f64>> = (0..len)
            .map(|k| {
                let [x, y] = grid.coords(k);
                Mat::identity(2).scaled((2.0 * eps * x.sin() * y.sin()).exp())
            })
            .collect();
        let st = RrfsState::new(
            grid,
            2,
            g,
            vec![Mat::zeros(2, 2); len],
            vec![Mat::identity(2); len],
        )
        .unwrap();
        let spec = RescalingSpec {
            mode: RescalingMode::Constant(0.7),
            c_coupling: 0.0,
        };
        let (dg, _, df) = rrfs_rhs(&st, &spec, FlowMode::Full).unwrap();
        let r = scalar_curvature(&st).unwrap();
        for k in 0..len {
            let expect = st.g[k].scaled(-(r[k] + 0.7));
            assert!((&dg[k] - &expect).max_abs() < 1e-3);
        }
        assert_eq!(sup(&df), 0.0);
    }

    #[test]
    fn stationary_data_stays_put() {
        let grid = PeriodicGrid::uniform(1, 16, 1.0).unwrap();
        let st = RrfsState::flat(grid, &Mat::identity(2)).unwrap();
        let run = integrate_rrfs(
            &st,
            &RescalingSpec::volume(),
            FlowMode::Full,
            1.0,
            &IntegratorConfig::default(),
            &[],
        )
        .unwrap();
        assert!(run.final_state().max_abs_diff(&st) <= 1e-12);
        assert!(run.diagnostics.iter().all(|d| d.energy == 0.0));
    }

    #[test]
    fn harmonic_map_flow_smooths() {
        let mut spec = RandomFieldSpec::new(1, 2, 32, 9);
        spec.metric_amplitude = 0.0;
        spec.connection_amplitude = 0.0;
        let st = random_smooth_state(&spec).unwrap();
        let run = integrate_rrfs(
            &st,
            &RescalingSpec::default(),
            FlowMode::HarmonicMapOnly,
            1.0,
            &IntegratorConfig::with_tolerances(1e-8, 1e-10),
            &[0.25, 0.5],
        )
        .unwrap();
        assert_eq!(run.snapshots.len(), 4);
        let e: Vec<f64> = run.diagnostics.iter().map(|d| d.energy).collect();
        assert!(e.windows(2).all(|w| w[1] <= w[0]));
        assert!(e[e.len() - 1] < 0.5 * e[0]);
        assert_eq!(run.final_state().g, st.g);
    }

    #[test]
    fn invalid_initial_state_names_the_node() {
        let grid = PeriodicGrid::uniform(1, 8, 1.0).unwrap();
        let mut bad = RrfsState::flat(grid, &Mat::identity(1)).unwrap();
        bad.fiber[3] = Mat::from_diag(&[-1.0]);
        assert!(matches!(
            integrate_rrfs(
                &bad,
                &RescalingSpec::default(),
                FlowMode::Full,
                1.0,
                &IntegratorConfig::default(),
                &[]
            ),
            Err(RrfsError::NotSpd {
                field: "G",
                node: 3
            })
        ));
    }
}

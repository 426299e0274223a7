//! Left-invariant Ricci flow coupled to harmonic map flow on the Heisenberg
//! group Nil³.
//!
//! Metrics are diagonal in the Milnor frame, `g = A θ¹² + B θ²² + C θ³²`,
//! and the map is the linear function `φ = a x`. The flow reduces to
//!
//! ```text
//! A' = C/B + 2 a² c(t),   B' = C/A,   C' = -C²/(AB)
//! ```
//!
//! with `Φ = B C` conserved. This module provides the right-hand side, the
//! closed-form Ricci-flow solution for `A₀ = B₀`, the blowdown rescaling,
//! the growth bounds, and the asymptotic fits used to read off exponents and
//! prefactors from long integrations.

use thiserror::Error;

use crate::ode::{integrate_adaptive, IntegratorConfig, OdeError, OdeSystem, Trajectory};
use crate::scalar::Real;
use crate::series::{fd_weights, linear_fit};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Nil3Error {
    #[error("metric coefficients must be positive and finite (A={a}, B={b}, C={c})")]
    NonPositiveState { a: f64, b: f64, c: f64 },
    #[error("invalid coupling: {0}")]
    InvalidCoupling(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("closed-form Ricci solution needs A0 = B0 and zero coupling")]
    AsymmetricData,
    #[error("window [{lo:e}, {hi:e}] is not covered by the trajectory [{t_min:e}, {t_max:e}]")]
    WindowOutOfRange {
        lo: f64,
        hi: f64,
        t_min: f64,
        t_max: f64,
    },
    #[error("fit window must span at least two decades (got [{lo:e}, {hi:e}])")]
    WindowTooNarrow { lo: f64, hi: f64 },
    #[error("non-positive sample {value:e} at t = {t:e}")]
    NonPositiveSample { t: f64, value: f64 },
    #[error("not enough samples: need {needed}, have {have}")]
    TooFewSamples { needed: usize, have: usize },
    #[error(transparent)]
    Integration(#[from] OdeError),
}

/// Diagonal left-invariant metric coefficients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Nil3State<T> {
    pub a: T,
    pub b: T,
    pub c: T,
}

impl<T: Real> Nil3State<T> {
    pub fn new(a: T, b: T, c: T) -> Result<Self, Nil3Error> {
        let ok = |x: T| x > T::zero() && x.is_finite();
        if ok(a) && ok(b) && ok(c) {
            Ok(Self { a, b, c })
        } else {
            Err(Nil3Error::NonPositiveState {
                a: a.to_f64_lossy(),
                b: b.to_f64_lossy(),
                c: c.to_f64_lossy(),
            })
        }
    }

    pub fn from_slice(y: &[T]) -> Result<Self, Nil3Error> {
        Self::new(y[0], y[1], y[2])
    }

    pub fn to_array(self) -> [T; 3] {
        [self.a, self.b, self.c]
    }
}

/// Slope `a` of the harmonic map `φ(x, y, z) = a x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapSlope<T>(pub T);

/// Shape of the coupling function before blowdown.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CouplingKind<T> {
    Zero,
    Constant {
        c0: T,
    },
    /// `c0 (1 + t)^{-r}`, the regular version of `c ~ t^{-r}`.
    Power {
        c0: T,
        r: T,
    },
}

/// Coupling function `c(t) = s² c_kind(s t)`; `s = 1` until a blowdown is applied.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CouplingSchedule<T> {
    pub kind: CouplingKind<T>,
    pub time_scale: T,
}

impl<T: Real> CouplingSchedule<T> {
    pub fn zero() -> Self {
        Self {
            kind: CouplingKind::Zero,
            time_scale: T::one(),
        }
    }

    pub fn constant(c0: T) -> Result<Self, Nil3Error> {
        if !(c0 >= T::zero()) || !c0.is_finite() {
            return Err(Nil3Error::InvalidCoupling(format!(
                "c0 must be >= 0, got {c0}"
            )));
        }
        Ok(Self {
            kind: CouplingKind::Constant { c0 },
            time_scale: T::one(),
        })
    }

    pub fn power(c0: T, r: T) -> Result<Self, Nil3Error> {
        if !(c0 >= T::zero()) || !c0.is_finite() {
            return Err(Nil3Error::InvalidCoupling(format!(
                "c0 must be >= 0, got {c0}"
            )));
        }
        if !(r > T::zero()) || !r.is_finite() {
            return Err(Nil3Error::InvalidCoupling(format!(
                "r must be > 0, got {r}"
            )));
        }
        Ok(Self {
            kind: CouplingKind::Power { c0, r },
            time_scale: T::one(),
        })
    }

    pub fn eval(&self, t: T) -> T {
        let s = self.time_scale;
        let st = s * t;
        let base = match self.kind {
            CouplingKind::Zero => return T::zero(),
            CouplingKind::Constant { c0 } => c0,
            CouplingKind::Power { c0, r } => c0 * (T::one() + st).powf(-r),
        };
        s * s * base
    }

    /// `c_s(t) = s² c(s t)`
    pub fn blowdown(&self, s: T) -> Self {
        Self {
            kind: self.kind,
            time_scale: self.time_scale * s,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self.kind {
            CouplingKind::Zero => true,
            CouplingKind::Constant { c0 } | CouplingKind::Power { c0, .. } => c0 == T::zero(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Nil3Params<T> {
    pub state0: Nil3State<T>,
    pub slope: MapSlope<T>,
    pub coupling: CouplingSchedule<T>,
    /// `Φ₀ = B₀ C₀`
    pub phi0: T,
}

impl<T: Real> Nil3Params<T> {
    pub fn new(
        state0: Nil3State<T>,
        slope: MapSlope<T>,
        coupling: CouplingSchedule<T>,
    ) -> Result<Self, Nil3Error> {
        if !slope.0.is_finite() {
            return Err(Nil3Error::InvalidParameter(
                "map slope must be finite".into(),
            ));
        }
        Ok(Self {
            state0,
            slope,
            coupling,
            phi0: conserved_phi(&state0),
        })
    }

    /// Pure Ricci flow from `state0`.
    pub fn ricci(state0: Nil3State<T>) -> Self {
        Self {
            state0,
            slope: MapSlope(T::zero()),
            coupling: CouplingSchedule::zero(),
            phi0: conserved_phi(&state0),
        }
    }

    /// `f(t) = 2 a² c(t)`
    pub fn forcing(&self, t: T) -> T {
        let a = self.slope.0;
        T::lit(2.0) * a * a * self.coupling.eval(t)
    }
}

/// θⁱ⊗θⁱ coefficients of `-2 Rc` for the diagonal metric: `(C/B, C/A, -C²/(AB))`.
pub fn minus_two_ricci<T: Real>(s: &Nil3State<T>) -> [T; 3] {
    [s.c / s.b, s.c / s.a, -(s.c * s.c) / (s.a * s.b)]
}

/// Time derivative of `(A, B, C)` under the coupled flow.
pub fn rhs<T: Real>(s: &Nil3State<T>, t: T, params: &Nil3Params<T>) -> [T; 3] {
    let [r1, r2, r3] = minus_two_ricci(s);
    [r1 + params.forcing(t), r2, r3]
}

pub fn conserved_phi<T: Real>(s: &Nil3State<T>) -> T {
    s.b * s.c
}

/// Closed-form Ricci-flow solution for `A₀ = B₀`:
/// `A = B = (A₀³ + 3Φt)^{1/3}`, `C = Φ/A`, `Φ = A₀ C₀`.
pub fn exact_ricci_solution<T: Real>(
    t: T,
    state0: &Nil3State<T>,
) -> Result<Nil3State<T>, Nil3Error> {
    if state0.a != state0.b {
        return Err(Nil3Error::AsymmetricData);
    }
    let phi = state0.a * state0.c;
    let a = (state0.a.powi(3) + T::lit(3.0) * phi * t).cbrt();
    Nil3State::new(a, a, phi / a)
}

/// [`OdeSystem`] view of the flow, with a positivity guard on `A`, `B`, `C`.
pub struct Nil3System<'a, T> {
    params: &'a Nil3Params<T>,
}

impl<'a, T: Real> Nil3System<'a, T> {
    pub fn new(params: &'a Nil3Params<T>) -> Self {
        Self { params }
    }
}

impl<T: Real> OdeSystem<T> for Nil3System<'_, T> {
    fn dim(&self) -> usize {
        3
    }

    fn rhs(&self, t: T, y: &[T], dydt: &mut [T]) {
        let s = Nil3State {
            a: y[0],
            b: y[1],
            c: y[2],
        };
        dydt.copy_from_slice(&rhs(&s, t, self.params));
    }

    fn admissible(&self, _t: T, y: &[T]) -> Result<(), String> {
        for (name, &v) in ["A", "B", "C"].iter().zip(y) {
            if !(v > T::zero()) {
                return Err(format!("{name} = {v:e} is not positive"));
            }
        }
        Ok(())
    }
}

/// Integrates the flow from `t = 0` to `t_end`.
pub fn integrate<T: Real>(
    params: &Nil3Params<T>,
    t_end: T,
    cfg: &IntegratorConfig<T>,
) -> Result<Trajectory<T>, Nil3Error> {
    let sys = Nil3System::new(params);
    Ok(integrate_adaptive(
        &sys,
        T::zero(),
        t_end,
        &params.state0.to_array(),
        cfg,
    )?)
}

/// Trajectory sampled from the closed-form Ricci solution at log-spaced times.
pub fn exact_ricci_trajectory<T: Real>(
    state0: &Nil3State<T>,
    t_end: T,
    samples_per_decade: usize,
) -> Result<Trajectory<T>, Nil3Error> {
    exact_ricci_solution(T::zero(), state0)?;
    let times = crate::ode::log_spaced_times(T::zero(), t_end, samples_per_decade);
    Ok(Trajectory::from_fn(times, samples_per_decade, |t| {
        exact_ricci_solution(t, state0)
            .map(|s| s.to_array().to_vec())
            .unwrap_or_default()
    }))
}

/// Largest `|Φ(t)/Φ₀ - 1|` over the samples.
pub fn phi_drift<T: Real>(traj: &Trajectory<T>, phi0: T) -> T {
    traj.states
        .iter()
        .map(|y| (y[1] * y[2] / phi0 - T::one()).abs())
        .fold(T::zero(), T::max)
}

/// Blowdown `state_s(t) = state(s t)/s`, `a_s = a/s`, `c_s(t) = s² c(s t)`.
///
/// The returned trajectory holds every source sample mapped to time `t/s`,
/// restricted to `window` when one is given.
pub fn blowdown<T: Real>(
    params: &Nil3Params<T>,
    traj: &Trajectory<T>,
    s: T,
    window: Option<(T, T)>,
) -> Result<(Nil3Params<T>, Trajectory<T>), Nil3Error> {
    if !(s > T::zero()) || !s.is_finite() {
        return Err(Nil3Error::InvalidParameter(format!(
            "blowdown factor must be > 0, got {s}"
        )));
    }
    if traj.is_empty() {
        return Err(Nil3Error::TooFewSamples { needed: 1, have: 0 });
    }
    let t_min = traj.times[0] / s;
    let t_max = *traj.times.last().unwrap() / s;
    let (lo, hi) = window.unwrap_or((t_min, t_max));
    let slack = T::lit(1e-12) * t_max.abs().max(T::one());
    if lo < t_min - slack || hi > t_max + slack || !(lo <= hi) {
        return Err(Nil3Error::WindowOutOfRange {
            lo: lo.to_f64_lossy(),
            hi: hi.to_f64_lossy(),
            t_min: t_min.to_f64_lossy(),
            t_max: t_max.to_f64_lossy(),
        });
    }
    let state0 = Nil3State::new(
        params.state0.a / s,
        params.state0.b / s,
        params.state0.c / s,
    )?;
    let scaled = Nil3Params {
        state0,
        slope: MapSlope(params.slope.0 / s),
        coupling: params.coupling.blowdown(s),
        phi0: conserved_phi(&state0),
    };
    let mut times = Vec::new();
    let mut states = Vec::new();
    for (t, y) in traj.times.iter().zip(&traj.states) {
        let ts = *t / s;
        if ts >= lo - slack && ts <= hi + slack {
            times.push(ts);
            states.push(y.iter().map(|&v| v / s).collect());
        }
    }
    Ok((
        scaled,
        Trajectory {
            times,
            states,
            samples_per_decade: traj.samples_per_decade,
            stats: traj.stats,
        },
    ))
}

/// Max over interior samples of `|dy/dt - rhs| / (1 + |rhs|)`, with `dy/dt`
/// from centred differences in `u = log(1 + t)` on the actual (possibly
/// nonuniform) sample positions. Seven-point stencils are used when the
/// trajectory has at least seven samples, five-point otherwise.
pub fn flow_residual<T: Real>(
    traj: &Trajectory<T>,
    params: &Nil3Params<T>,
) -> Result<T, Nil3Error> {
    let n = traj.len();
    if n < 5 {
        return Err(Nil3Error::TooFewSamples { needed: 5, have: n });
    }
    let u: Vec<T> = traj.times.iter().map(|&t| (T::one() + t).ln()).collect();
    let half = if n >= 7 { 3 } else { 2 };
    let mut worst = T::zero();
    for i in half..n - half {
        let w = fd_weights(u[i], &u[i - half..=i + half], 1);
        let t = traj.times[i];
        let state = Nil3State {
            a: traj.states[i][0],
            b: traj.states[i][1],
            c: traj.states[i][2],
        };
        let f = rhs(&state, t, params);
        for (comp, &fc) in f.iter().enumerate() {
            let du: T = w
                .iter()
                .enumerate()
                .map(|(k, &wk)| wk * traj.states[i - half + k][comp])
                .sum();
            let dt = du / (T::one() + t);
            let r = (dt - fc).abs() / (T::one() + fc.abs());
            worst = worst.max(r);
        }
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    A,
    B,
    C,
}

impl Component {
    pub fn index(self) -> usize {
        match self {
            Component::A => 0,
            Component::B => 1,
            Component::C => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Component::A => "A",
            Component::B => "B",
            Component::C => "C",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitMode {
    /// `Q ~ prefactor · t^exponent`
    PowerLaw,
    /// `Q² ~ κ log t`; `prefactor` holds κ, `exponent` is 1/2 (power of `log t`).
    LogGrowth,
    /// `Q ~ prefactor / sqrt(log t)`, from a fit of `Q⁻²` against `log t`.
    LogDecay,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AsymptoticFit<T> {
    pub exponent: T,
    pub prefactor: T,
    pub window: (T, T),
    pub r_squared: T,
    pub mode: FitMode,
    pub samples: usize,
}

fn window_samples<T: Real>(
    traj: &Trajectory<T>,
    component: Component,
    window: (T, T),
) -> Result<(Vec<T>, Vec<T>), Nil3Error> {
    let (lo, hi) = window;
    if !(lo > T::zero()) || !(hi / lo >= T::lit(100.0) * (T::one() - T::lit(1e-9))) {
        return Err(Nil3Error::WindowTooNarrow {
            lo: lo.to_f64_lossy(),
            hi: hi.to_f64_lossy(),
        });
    }
    let t_min = traj.times.first().copied().unwrap_or(T::zero());
    let t_max = traj.times.last().copied().unwrap_or(T::zero());
    let slack = T::lit(1e-9);
    if lo < t_min * (T::one() - slack) || hi > t_max * (T::one() + slack) {
        return Err(Nil3Error::WindowOutOfRange {
            lo: lo.to_f64_lossy(),
            hi: hi.to_f64_lossy(),
            t_min: t_min.to_f64_lossy(),
            t_max: t_max.to_f64_lossy(),
        });
    }
    let mut ts = Vec::new();
    let mut qs = Vec::new();
    for (t, y) in traj.times.iter().zip(&traj.states) {
        if *t >= lo * (T::one() - slack) && *t <= hi * (T::one() + slack) {
            let q = y[component.index()];
            if !(q > T::zero()) {
                return Err(Nil3Error::NonPositiveSample {
                    t: t.to_f64_lossy(),
                    value: q.to_f64_lossy(),
                });
            }
            ts.push(*t);
            qs.push(q);
        }
    }
    if ts.len() < 3 {
        return Err(Nil3Error::TooFewSamples {
            needed: 3,
            have: ts.len(),
        });
    }
    Ok((ts, qs))
}

/// Least-squares fit of `log Q` against `log t` over the window.
pub fn fit_power_law<T: Real>(
    traj: &Trajectory<T>,
    component: Component,
    window: (T, T),
) -> Result<AsymptoticFit<T>, Nil3Error> {
    let (ts, qs) = window_samples(traj, component, window)?;
    let lx: Vec<T> = ts.iter().map(|t| t.ln()).collect();
    let ly: Vec<T> = qs.iter().map(|q| q.ln()).collect();
    let fit = linear_fit(&lx, &ly).ok_or(Nil3Error::TooFewSamples {
        needed: 2,
        have: ts.len(),
    })?;
    Ok(AsymptoticFit {
        exponent: fit.slope,
        prefactor: fit.intercept.exp(),
        window,
        r_squared: fit.r_squared,
        mode: FitMode::PowerLaw,
        samples: ts.len(),
    })
}

/// Least-squares fit of `Q²` against `log t`; the slope κ is the prefactor.
pub fn fit_log_growth<T: Real>(
    traj: &Trajectory<T>,
    component: Component,
    window: (T, T),
) -> Result<AsymptoticFit<T>, Nil3Error> {
    let (ts, qs) = window_samples(traj, component, window)?;
    let lx: Vec<T> = ts.iter().map(|t| t.ln()).collect();
    let ly: Vec<T> = qs.iter().map(|&q| q * q).collect();
    let fit = linear_fit(&lx, &ly).ok_or(Nil3Error::TooFewSamples {
        needed: 2,
        have: ts.len(),
    })?;
    Ok(AsymptoticFit {
        exponent: T::lit(0.5),
        prefactor: fit.slope,
        window,
        r_squared: fit.r_squared,
        mode: FitMode::LogGrowth,
        samples: ts.len(),
    })
}

/// Fit of `Q⁻²` against `log t`; reports `Q ~ prefactor / sqrt(log t)`.
pub fn fit_log_decay<T: Real>(
    traj: &Trajectory<T>,
    component: Component,
    window: (T, T),
) -> Result<AsymptoticFit<T>, Nil3Error> {
    let (ts, qs) = window_samples(traj, component, window)?;
    let lx: Vec<T> = ts.iter().map(|t| t.ln()).collect();
    let ly: Vec<T> = qs.iter().map(|&q| T::one() / (q * q)).collect();
    let fit = linear_fit(&lx, &ly).ok_or(Nil3Error::TooFewSamples {
        needed: 2,
        have: ts.len(),
    })?;
    if !(fit.slope > T::zero()) {
        return Err(Nil3Error::InvalidParameter(
            "component is not decaying like 1/sqrt(log t) in the window".into(),
        ));
    }
    Ok(AsymptoticFit {
        exponent: -T::lit(0.5),
        prefactor: T::one() / fit.slope.sqrt(),
        window,
        r_squared: fit.r_squared,
        mode: FitMode::LogDecay,
        samples: ts.len(),
    })
}

/// Default fit window: the last two decades before `t_end`.
pub fn default_window<T: Real>(t_end: T) -> (T, T) {
    (t_end / T::lit(100.0), t_end)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RicciPrediction<T> {
    pub a_prefactor: T,
    pub b_prefactor: T,
    pub c_prefactor: T,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantCouplingPrediction<T> {
    /// Linear growth rate of `A`: `2 a² c`.
    pub a_rate: T,
    /// Slope of `B²` against `log t`: `B₀C₀ / (a² c)`.
    pub kappa_b: T,
    /// `C ~ prefactor / sqrt(log t)` consistent with `B C = Φ`: `sqrt(a² c B₀ C₀)`.
    pub c_prefactor: T,
    /// Twice the consistent value, as the asymptotic is sometimes quoted.
    pub c_prefactor_quoted: T,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerCouplingPrediction<T> {
    pub exponents: [T; 3],
    /// Whether `r >= 1`, where the `t^{1/3}` regime is established.
    pub established: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictedConstants<T> {
    /// `K = A₀ B₀ / (3 C₀)`
    pub k: T,
    pub ricci: RicciPrediction<T>,
    pub constant: Option<ConstantCouplingPrediction<T>>,
    pub power: Option<PowerCouplingPrediction<T>>,
}

pub fn predicted_constants<T: Real>(
    params: &Nil3Params<T>,
) -> Result<PredictedConstants<T>, Nil3Error> {
    let s0 = params.state0;
    let k = s0.a * s0.b / (T::lit(3.0) * s0.c);
    let k13 = k.cbrt();
    let ricci = RicciPrediction {
        a_prefactor: s0.a / k13,
        b_prefactor: s0.b / k13,
        c_prefactor: s0.c * k13,
    };
    let third = T::one() / T::lit(3.0);
    let a2 = params.slope.0 * params.slope.0;
    let mut out = PredictedConstants {
        k,
        ricci,
        constant: None,
        power: None,
    };
    match params.coupling.kind {
        CouplingKind::Zero => {}
        CouplingKind::Constant { .. } => {
            let c = params.coupling.eval(T::zero());
            let a2c = a2 * c;
            if !(a2c > T::zero()) {
                return Err(Nil3Error::InvalidCoupling(
                    "constant-coupling regime needs a² c > 0".into(),
                ));
            }
            let phi = params.phi0;
            out.constant = Some(ConstantCouplingPrediction {
                a_rate: T::lit(2.0) * a2c,
                kappa_b: phi / a2c,
                c_prefactor: (a2c * phi).sqrt(),
                c_prefactor_quoted: T::lit(2.0) * (a2c * phi).sqrt(),
            });
        }
        CouplingKind::Power { r, .. } => {
            out.power = Some(PowerCouplingPrediction {
                exponents: [third, third, -third],
                established: r >= T::one(),
            });
        }
    }
    Ok(out)
}

/// Consistency targets for the `r >= 1` regime given a measured `A ~ α t^{1/3}`:
/// `B ~ sqrt(3Φ/α) t^{1/3}` and `C ~ sqrt(αΦ/3) t^{-1/3}`.
pub fn power_regime_prefactors<T: Real>(alpha: T, phi: T) -> (T, T) {
    let three = T::lit(3.0);
    ((three * phi / alpha).sqrt(), (alpha * phi / three).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bound {
    CLower,
    CUpper,
    AUpper,
    AMonotone,
    BMonotone,
    CMonotone,
}

impl Bound {
    pub fn name(self) -> &'static str {
        match self {
            Bound::CLower => "C >= A0 B0 C0 / (A0 B0 + C0 t)",
            Bound::CUpper => "C <= C0",
            Bound::AUpper => "A <= A0 + (C0/B0 + f0) t",
            Bound::AMonotone => "A non-decreasing",
            Bound::BMonotone => "B non-decreasing",
            Bound::CMonotone => "C non-increasing",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundViolation<T> {
    pub bound: Bound,
    pub time: T,
    pub margin: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundsReport<T> {
    /// Smallest relative slack over all samples and bounds.
    pub worst_slack: T,
    pub worst_bound: Option<Bound>,
    pub worst_time: T,
    pub violations: Vec<BoundViolation<T>>,
}

impl<T: Real> BoundsReport<T> {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the a-priori growth bounds at every sample; slack is reported
/// relative to the bound's magnitude.
pub fn bounds_check<T: Real>(traj: &Trajectory<T>, params: &Nil3Params<T>) -> BoundsReport<T> {
    let s0 = params.state0;
    let f0 = params.forcing(T::zero());
    let mut report = BoundsReport {
        worst_slack: T::infinity(),
        worst_bound: None,
        worst_time: T::zero(),
        violations: Vec::new(),
    };
    let mut record = |bound: Bound, t: T, slack: T| {
        if slack < report.worst_slack {
            report.worst_slack = slack;
            report.worst_bound = Some(bound);
            report.worst_time = t;
        }
        if slack < T::zero() || slack.is_nan() {
            report.violations.push(BoundViolation {
                bound,
                time: t,
                margin: slack,
            });
        }
    };
    let rel = |upper: T, lower: T| {
        (upper - lower) / upper.abs().max(lower.abs()).max(T::min_positive_value())
    };
    for (i, (t, y)) in traj.times.iter().zip(&traj.states).enumerate() {
        let t = *t;
        let (a, c) = (y[0], y[2]);
        // A0 B0 C0 / (A0 B0 + C0 t), arranged to be exact at t = 0
        let c_lower = s0.c / (T::one() + s0.c * t / (s0.a * s0.b));
        record(Bound::CLower, t, rel(c, c_lower));
        record(Bound::CUpper, t, rel(s0.c, c));
        let a_upper = s0.a + (s0.c / s0.b + f0) * t;
        record(Bound::AUpper, t, rel(a_upper, a));
        if i > 0 {
            let prev = &traj.states[i - 1];
            record(Bound::AMonotone, t, rel(y[0], prev[0]));
            record(Bound::BMonotone, t, rel(y[1], prev[1]));
            record(Bound::CMonotone, t, rel(prev[2], y[2]));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn st(a: f64, b: f64, c: f64) -> Nil3State<f64> {
        Nil3State::new(a, b, c).unwrap()
    }

    #[test]
    fn minus_two_ricci_values() {
        assert_eq!(minus_two_ricci(&st(1.0, 1.0, 1.0)), [1.0, 1.0, -1.0]);
        assert_eq!(minus_two_ricci(&st(2.0, 3.0, 6.0)), [2.0, 3.0, -6.0]);
    }

    #[test]
    fn rhs_values() {
        let p0 = Nil3Params::ricci(st(1.0, 1.0, 1.0));
        assert_eq!(rhs(&st(1.0, 1.0, 1.0), 0.0, &p0), [1.0, 1.0, -1.0]);
        let p = Nil3Params::new(
            st(1.0, 1.0, 1.0),
            MapSlope(1.0),
            CouplingSchedule::constant(0.5).unwrap(),
        )
        .unwrap();
        assert_eq!(rhs(&st(1.0, 1.0, 1.0), 3.0, &p), [2.0, 1.0, -1.0]);
    }

    #[test]
    fn state_validation() {
        assert!(Nil3State::new(1.0, 0.0, 1.0).is_err());
        assert!(Nil3State::new(1.0, 1.0, f64::NAN).is_err());
        assert!(CouplingSchedule::constant(-1.0).is_err());
        assert!(CouplingSchedule::power(1.0, 0.0).is_err());
    }

    #[test]
    fn phi_values() {
        assert_eq!(conserved_phi(&st(1.0, 1.0, 1.0)), 1.0);
        assert_eq!(conserved_phi(&st(5.0, 2.0, 3.0)), 6.0);
    }

    #[test]
    fn exact_solution_values() {
        let s0 = st(1.0, 1.0, 1.0);
        assert_eq!(exact_ricci_solution(0.0, &s0).unwrap(), s0);
        let s = exact_ricci_solution(21.0, &s0).unwrap();
        assert_abs_diff_eq!(s.a, 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.b, 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.c, 0.25, epsilon = 1e-15);
        assert_eq!(
            exact_ricci_solution(1.0, &st(2.0, 1.0, 1.0)),
            Err(Nil3Error::AsymmetricData)
        );
    }

    #[test]
    fn exact_solution_solves_the_flow() {
        // derivative of the closed form by hand: A' = Φ (A0³ + 3Φt)^{-2/3}
        let s0 = st(1.7, 1.7, 0.6);
        let p = Nil3Params::ricci(s0);
        let phi = 1.7 * 0.6;
        for &t in &[0.0, 0.37, 5.0, 123.0, 9.9e3] {
            let s = exact_ricci_solution(t, &s0).unwrap();
            let base: f64 = 1.7f64.powi(3) + 3.0 * phi * t;
            let da = phi * base.powf(-2.0 / 3.0);
            let dc = -phi * da / (s.a * s.a);
            let f = rhs(&s, t, &p);
            assert!((f[0] - da).abs() <= 1e-12 * da.abs());
            assert!((f[1] - da).abs() <= 1e-12 * da.abs());
            assert!((f[2] - dc).abs() <= 1e-12 * dc.abs());
        }
    }

    #[test]
    fn coupling_blowdown_matches_pointwise() {
        let c = CouplingSchedule::power(0.7, 1.5).unwrap();
        for &s in &[0.5f64, 4.0, 13.0] {
            let cs = c.blowdown(s);
            for &t in &[0.0f64, 0.1, 2.0, 77.0] {
                let direct = s * s * 0.7 * (1.0 + s * t).powf(-1.5);
                assert!((cs.eval(t) - direct).abs() <= 1e-14 * direct);
            }
        }
        let p = Nil3Params::new(st(1.0, 1.0, 1.0), MapSlope(2.0), c).unwrap();
        let traj = Trajectory::from_fn(vec![0.0, 1.0, 2.0], 1, |_| vec![1.0, 1.0, 1.0]);
        let (ps, _) = blowdown(&p, &traj, 4.0, None).unwrap();
        for &t in &[0.0, 0.3, 8.0] {
            let f = p.forcing(4.0 * t);
            assert!((ps.forcing(t) - f).abs() <= 1e-14 * f);
        }
    }

    #[test]
    fn blowdown_identity_and_errors() {
        let s0 = st(1.0, 1.0, 1.0);
        let p = Nil3Params::ricci(s0);
        let traj = exact_ricci_trajectory(&s0, 100.0, 8).unwrap();
        let (p1, t1) = blowdown(&p, &traj, 1.0, None).unwrap();
        assert_eq!(p1, p);
        assert_eq!(t1.times, traj.times);
        assert_eq!(t1.states, traj.states);
        assert!(matches!(
            blowdown(&p, &traj, 2.0, Some((0.0, 60.0))),
            Err(Nil3Error::WindowOutOfRange { .. })
        ));
        assert!(blowdown(&p, &traj, 0.0, None).is_err());
    }

    #[test]
    fn analytic_trajectory_residual() {
        let s0 = st(1.0, 1.0, 1.0);
        let traj = exact_ricci_trajectory(&s0, 1e4, 64).unwrap();
        let r = flow_residual(&traj, &Nil3Params::ricci(s0)).unwrap();
        assert!(r <= 1e-6, "residual {r:e}");
    }

    #[test]
    fn frozen_trajectory_has_large_residual() {
        let s0 = st(1.0, 1.0, 1.0);
        let times = crate::ode::log_spaced_times(0.0, 100.0, 16);
        let traj = Trajectory::from_fn(times, 16, |_| vec![1.0, 1.0, 1.0]);
        let r = flow_residual(&traj, &Nil3Params::ricci(s0)).unwrap();
        assert!(r > 0.1);
        let short = Trajectory::from_fn(vec![0.0, 1.0, 2.0, 3.0], 1, |_| vec![1.0; 3]);
        assert!(matches!(
            flow_residual(&short, &Nil3Params::ricci(s0)),
            Err(Nil3Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn blowdown_of_analytic_solution() {
        // s = 4: A_s(t) = (1 + 12 t)^{1/3} / 4
        let s0 = st(1.0, 1.0, 1.0);
        let p = Nil3Params::ricci(s0);
        let traj = exact_ricci_trajectory(&s0, 1e4, 64).unwrap();
        let src = flow_residual(&traj, &p).unwrap();
        let (ps, ts) = blowdown(&p, &traj, 4.0, None).unwrap();
        for (t, y) in ts.times.iter().zip(&ts.states) {
            let a = (1.0 + 12.0 * t).cbrt() / 4.0;
            assert!((y[0] - a).abs() <= 1e-14 * a);
        }
        let r = flow_residual(&ts, &ps).unwrap();
        assert!(r <= 10.0 * src.max(1e-12), "{r:e} vs {src:e}");
    }

    #[test]
    fn power_fit_exact() {
        let times = crate::ode::log_spaced_times(0.0, 1e5, 16);
        let traj = Trajectory::from_fn(times, 16, |t: f64| vec![7.0 * t.sqrt(), 1.0, 1.0]);
        let fit = fit_power_law(&traj, Component::A, (10.0, 1e5)).unwrap();
        assert_abs_diff_eq!(fit.exponent, 0.5, epsilon = 1e-10);
        assert!((fit.prefactor - 7.0f64).abs() <= 1e-10 * 7.0);
        assert!(fit.r_squared > 1.0 - 1e-12);
        assert!(matches!(
            fit_power_law(&traj, Component::A, (10.0, 500.0)),
            Err(Nil3Error::WindowTooNarrow { .. })
        ));
        assert!(matches!(
            fit_power_law(&traj, Component::A, (10.0, 1e7)),
            Err(Nil3Error::WindowOutOfRange { .. })
        ));
        let neg = Trajectory::from_fn(crate::ode::log_spaced_times(0.0, 1e5, 16), 16, |t| {
            vec![-t, 1.0, 1.0]
        });
        assert!(matches!(
            fit_power_law(&neg, Component::A, (10.0, 1e5)),
            Err(Nil3Error::NonPositiveSample { .. })
        ));
    }

    #[test]
    fn log_growth_fit_exact() {
        let times = crate::ode::log_spaced_times(0.0, 1e8, 32);
        let traj = Trajectory::from_fn(times, 32, |t: f64| {
            let l: f64 = t.max(1e-300).ln().max(1e-300);
            vec![1.0, (5.0 * l).sqrt(), (1.0 / (3.0 * l)).sqrt()]
        });
        let fit = fit_log_growth(&traj, Component::B, (1e4, 1e8)).unwrap();
        assert!((fit.prefactor - 5.0f64).abs() <= 1e-8 * 5.0);
        assert_eq!(fit.mode, FitMode::LogGrowth);
        let dec = fit_log_decay(&traj, Component::C, (1e4, 1e8)).unwrap();
        assert!((dec.prefactor - (1.0f64 / 3.0).sqrt()).abs() <= 1e-8);
    }

    #[test]
    fn predicted_constant_values() {
        let p = predicted_constants(&Nil3Params::ricci(st(1.0, 1.0, 1.0))).unwrap();
        assert_abs_diff_eq!(p.k, 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.ricci.a_prefactor, 3f64.cbrt(), epsilon = 1e-14);
        let p = predicted_constants(&Nil3Params::ricci(st(2.0, 1.0, 1.0))).unwrap();
        assert_abs_diff_eq!(p.k, 2.0 / 3.0, epsilon = 1e-15);
        let params = Nil3Params::new(
            st(1.0, 1.0, 1.0),
            MapSlope(1.0),
            CouplingSchedule::constant(0.5).unwrap(),
        )
        .unwrap();
        let cc = predicted_constants(&params).unwrap().constant.unwrap();
        assert_eq!(cc.a_rate, 1.0);
        assert_eq!(cc.kappa_b, 2.0);
        assert_abs_diff_eq!(cc.c_prefactor, 0.5f64.sqrt(), epsilon = 1e-15);
        let zero = Nil3Params::new(
            st(1.0, 1.0, 1.0),
            MapSlope(0.0),
            CouplingSchedule::constant(0.5).unwrap(),
        )
        .unwrap();
        assert!(predicted_constants(&zero).is_err());
    }

    #[test]
    fn bounds_on_analytic_solution() {
        let s0 = st(1.0, 1.0, 1.0);
        let traj = exact_ricci_trajectory(&s0, 1e6, 16).unwrap();
        let rep = bounds_check(&traj, &Nil3Params::ricci(s0));
        assert!(rep.ok(), "{:?}", rep.violations.first());
        assert!(rep.worst_slack >= 0.0);
        // the only saturated bound is C <= C0 at t = 0
        assert_eq!(rep.worst_slack, 0.0);
        assert_eq!(rep.worst_time, 0.0);
    }

    #[test]
    fn bounds_flag_violations() {
        let s0 = st(1.0, 1.0, 1.0);
        let traj = Trajectory::from_fn(vec![0.0, 1.0, 2.0], 1, |t| vec![1.0 + 10.0 * t, 1.0, 1.0]);
        let rep = bounds_check(&traj, &Nil3Params::ricci(s0));
        assert!(!rep.ok());
        assert!(rep
            .violations
            .iter()
            .any(|v| v.bound == Bound::AUpper && v.time == 1.0));
    }

    #[test]
    fn integration_matches_oracle_short() {
        let s0 = st(1.0, 1.0, 1.0);
        let traj = integrate(&Nil3Params::ricci(s0), 100.0, &IntegratorConfig::default()).unwrap();
        for (t, y) in traj.times.iter().zip(&traj.states) {
            let e = exact_ricci_solution(*t, &s0).unwrap();
            assert!((y[0] - e.a).abs() <= 1e-7 * e.a);
        }
    }

    proptest! {
        #[test]
        fn phi_is_algebraically_conserved(a in 0.01f64..100.0, b in 0.01f64..100.0, c in 0.01f64..100.0, slope in -3.0f64..3.0, c0 in 0.0f64..2.0, t in 0.0f64..1e6) {
            let s = st(a, b, c);
            let p = Nil3Params::new(s, MapSlope(slope), CouplingSchedule::constant(c0).unwrap()).unwrap();
            let f = rhs(&s, t, &p);
            let d = f[1] * c + b * f[2];
            prop_assert!(d.abs() <= 1e-12 * (f[1] * c).abs().max(1e-300));
            // monotonicity
            prop_assert!(f[0] > 0.0 && f[1] > 0.0 && f[2] < 0.0);
        }

        #[test]
        fn ricci_scale_invariant(a in 0.01f64..100.0, b in 0.01f64..100.0, c in 0.01f64..100.0, lam in 0.01f64..100.0) {
            let r = minus_two_ricci(&st(a, b, c));
            let rs = minus_two_ricci(&st(lam * a, lam * b, lam * c));
            for k in 0..3 {
                prop_assert!((r[k] - rs[k]).abs() <= 1e-13 * r[k].abs());
            }
        }

        #[test]
        fn zero_coupling_rhs_is_ricci(a in 0.01f64..100.0, b in 0.01f64..100.0, c in 0.01f64..100.0, t in 0.0f64..1e3) {
            let s = st(a, b, c);
            prop_assert_eq!(rhs(&s, t, &Nil3Params::ricci(s)), minus_two_ricci(&s));
        }

        #[test]
        fn coupling_non_increasing(c0 in 0.0f64..5.0, r in 0.1f64..4.0, t in 0.0f64..1e6, dt in 0.0f64..1e3) {
            let c = CouplingSchedule::power(c0, r).unwrap();
            prop_assert!(c.eval(t + dt) <= c.eval(t));
            prop_assert!(c.eval(t) >= 0.0);
        }
    }
}

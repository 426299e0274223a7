//! Explicit time integration.
//!
//! [`rk4_step`] is the classical fixed-step scheme used for order studies.
//! [`integrate_adaptive`] runs the Dormand-Prince 5(4) pair with a PI step
//! controller, a positivity/admissibility guard and dense output through the
//! pair's continuous extension.

use std::ops::ControlFlow;

use thiserror::Error;

use crate::scalar::Real;
use crate::series::linear_fit;

/// Right-hand side of `y' = f(t, y)`, plus optional hooks used by the
/// adaptive integrator.
pub trait OdeSystem<T: Real> {
    fn dim(&self) -> usize;

    /// Writes `f(t, y)` into `dydt`. Must be deterministic.
    fn rhs(&self, t: T, y: &[T], dydt: &mut [T]);

    /// Rejects states that leave the physical domain (e.g. a metric
    /// coefficient crossing zero). The message names the failing part.
    fn admissible(&self, _t: T, _y: &[T]) -> Result<(), String> {
        Ok(())
    }

    /// State-dependent step cap (e.g. a CFL bound).
    fn max_step(&self, _t: T, _y: &[T]) -> Option<T> {
        None
    }
}

/// Adapter turning a closure into an [`OdeSystem`].
pub struct FnSystem<F> {
    dim: usize,
    f: F,
}

impl<F> FnSystem<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<T: Real, F: Fn(T, &[T], &mut [T])> OdeSystem<T> for FnSystem<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&self, t: T, y: &[T], dydt: &mut [T]) {
        (self.f)(t, y, dydt)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
    #[error("maximum number of steps ({max_steps}) exceeded at t = {t:e}")]
    MaxStepsExceeded { t: f64, max_steps: usize },
    #[error("step size underflow at t = {t:e} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("non-finite state or derivative at t = {t:e}")]
    NonFiniteState { t: f64 },
    #[error("positivity guard failed at t = {t:e}: {detail}")]
    PositivityLost { t: f64, detail: String },
    #[error("integration stopped at t = {t:e}: {reason}")]
    Aborted { t: f64, reason: String },
    #[error("convergence order is degenerate: the scheme is exact on this problem")]
    DegenerateOrder,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntegratorConfig<T> {
    pub rtol: T,
    pub atol: T,
    /// `None` selects a starting step from the problem's local scales.
    pub h_init: Option<T>,
    pub h_max: T,
    pub safety: T,
    pub max_steps: usize,
    pub samples_per_decade: usize,
}

impl<T: Real> Default for IntegratorConfig<T> {
    fn default() -> Self {
        Self {
            rtol: T::lit(1e-9),
            atol: T::lit(1e-12),
            h_init: None,
            h_max: T::infinity(),
            safety: T::lit(0.9),
            max_steps: 5_000_000,
            samples_per_decade: 32,
        }
    }
}

impl<T: Real> IntegratorConfig<T> {
    pub fn with_tolerances(rtol: T, atol: T) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), OdeError> {
        let bad = |m: &str| Err(OdeError::InvalidConfig(m.to_string()));
        if !(self.rtol > T::zero()) || !(self.atol > T::zero()) {
            return bad("rtol and atol must be positive");
        }
        if !(self.safety > T::zero() && self.safety < T::one()) {
            return bad("safety must lie in (0, 1)");
        }
        if !(self.h_max > T::zero()) {
            return bad("h_max must be positive");
        }
        if let Some(h) = self.h_init {
            if !(h > T::zero()) || h > self.h_max {
                return bad("h_init must satisfy 0 < h_init <= h_max");
            }
        }
        if self.max_steps == 0 || self.samples_per_decade == 0 {
            return bad("max_steps and samples_per_decade must be positive");
        }
        Ok(())
    }
}

/// Which times end up in a [`Trajectory`].
#[derive(Clone, Debug, PartialEq)]
pub enum Sampling<T> {
    /// `t_k = (1 + t0) 10^{k/spd} - 1`, i.e. uniform in `log(1 + t)`, plus `t1`.
    LogSpaced(usize),
    /// Every accepted integrator step.
    Steps,
    /// Exactly these times (clipped to `[t0, t1]`), plus `t0` and `t1`.
    At(Vec<T>),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub times: Vec<T>,
    pub states: Vec<Vec<T>>,
    pub samples_per_decade: usize,
    pub stats: StepStats,
}

impl<T: Real> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> Option<&[T]> {
        self.states.last().map(|s| s.as_slice())
    }

    pub fn component(&self, index: usize) -> Vec<T> {
        self.states.iter().map(|s| s[index]).collect()
    }

    /// Builds a trajectory from samples of a known function.
    pub fn from_fn(times: Vec<T>, samples_per_decade: usize, f: impl Fn(T) -> Vec<T>) -> Self {
        let states = times.iter().map(|&t| f(t)).collect();
        Self {
            times,
            states,
            samples_per_decade,
            stats: StepStats::default(),
        }
    }
}

/// Log-spaced sample times in `1 + t` covering `[t0, t1]`.
pub fn log_spaced_times<T: Real>(t0: T, t1: T, samples_per_decade: usize) -> Vec<T> {
    let mut out = vec![t0];
    let base = T::one() + t0;
    let spd = T::from_usize_lossy(samples_per_decade.max(1));
    let ten = T::lit(10.0);
    let mut k = 1usize;
    loop {
        let t = base * ten.powf(T::from_usize_lossy(k) / spd) - T::one();
        if t >= t1 {
            break;
        }
        if t > *out.last().unwrap() {
            out.push(t);
        }
        k += 1;
    }
    if t1 > t0 {
        // a grid point closer than half a step to t1 is replaced by t1
        let half = T::lit(0.5) * ten.ln() / spd;
        if out.len() > 1 && ((T::one() + t1) / (T::one() + *out.last().unwrap())).ln() < half {
            out.pop();
        }
        out.push(t1);
    }
    out
}

fn non_finite<T: Real>(v: &[T]) -> bool {
    v.iter().any(|x| !x.is_finite())
}

/// One classical RK4 step.
pub fn rk4_step<T: Real, S: OdeSystem<T> + ?Sized>(
    sys: &S,
    t: T,
    y: &[T],
    h: T,
) -> Result<Vec<T>, OdeError> {
    if !(h > T::zero()) {
        return Err(OdeError::InvalidConfig(format!(
            "step must be positive, got {h}"
        )));
    }
    let n = y.len();
    let half = T::lit(0.5);
    let mut k1 = vec![T::zero(); n];
    let mut k2 = vec![T::zero(); n];
    let mut k3 = vec![T::zero(); n];
    let mut k4 = vec![T::zero(); n];
    let mut tmp = vec![T::zero(); n];
    sys.rhs(t, y, &mut k1);
    for i in 0..n {
        tmp[i] = y[i] + half * h * k1[i];
    }
    sys.rhs(t + half * h, &tmp, &mut k2);
    for i in 0..n {
        tmp[i] = y[i] + half * h * k2[i];
    }
    sys.rhs(t + half * h, &tmp, &mut k3);
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    sys.rhs(t + h, &tmp, &mut k4);
    let sixth = h / T::lit(6.0);
    let out: Vec<T> = (0..n)
        .map(|i| y[i] + sixth * (k1[i] + T::lit(2.0) * (k2[i] + k3[i]) + k4[i]))
        .collect();
    if non_finite(&out) {
        return Err(OdeError::NonFiniteState {
            t: t.to_f64_lossy(),
        });
    }
    Ok(out)
}

/// Fixed-step RK4 from `t0` to `t1` with `n_steps` equal steps.
pub fn rk4_fixed<T: Real, S: OdeSystem<T> + ?Sized>(
    sys: &S,
    t0: T,
    y0: &[T],
    t1: T,
    n_steps: usize,
) -> Result<Vec<T>, OdeError> {
    let h = (t1 - t0) / T::from_usize_lossy(n_steps);
    let mut y = y0.to_vec();
    for k in 0..n_steps {
        let t = t0 + T::from_usize_lossy(k) * h;
        y = rk4_step(sys, t, &y, h)?;
    }
    Ok(y)
}

// Dormand-Prince 5(4) tableau.
mod dp {
    pub const C2: f64 = 1.0 / 5.0;
    pub const C3: f64 = 3.0 / 10.0;
    pub const C4: f64 = 4.0 / 5.0;
    pub const C5: f64 = 8.0 / 9.0;
    pub const A21: f64 = 1.0 / 5.0;
    pub const A31: f64 = 3.0 / 40.0;
    pub const A32: f64 = 9.0 / 40.0;
    pub const A41: f64 = 44.0 / 45.0;
    pub const A42: f64 = -56.0 / 15.0;
    pub const A43: f64 = 32.0 / 9.0;
    pub const A51: f64 = 19372.0 / 6561.0;
    pub const A52: f64 = -25360.0 / 2187.0;
    pub const A53: f64 = 64448.0 / 6561.0;
    pub const A54: f64 = -212.0 / 729.0;
    pub const A61: f64 = 9017.0 / 3168.0;
    pub const A62: f64 = -355.0 / 33.0;
    pub const A63: f64 = 46732.0 / 5247.0;
    pub const A64: f64 = 49.0 / 176.0;
    pub const A65: f64 = -5103.0 / 18656.0;
    pub const A71: f64 = 35.0 / 384.0;
    pub const A73: f64 = 500.0 / 1113.0;
    pub const A74: f64 = 125.0 / 192.0;
    pub const A75: f64 = -2187.0 / 6784.0;
    pub const A76: f64 = 11.0 / 84.0;
    pub const E1: f64 = 71.0 / 57600.0;
    pub const E3: f64 = -71.0 / 16695.0;
    pub const E4: f64 = 71.0 / 1920.0;
    pub const E5: f64 = -17253.0 / 339200.0;
    pub const E6: f64 = 22.0 / 525.0;
    pub const E7: f64 = -1.0 / 40.0;
    pub const D1: f64 = -12715105075.0 / 11282082432.0;
    pub const D3: f64 = 87487479700.0 / 32700410799.0;
    pub const D4: f64 = -10690763975.0 / 1880347072.0;
    pub const D5: f64 = 701980252875.0 / 199316789632.0;
    pub const D6: f64 = -1453857185.0 / 822651844.0;
    pub const D7: f64 = 69997945.0 / 29380423.0;
}

// Total guard rejections (positivity or non-finite) tolerated per run.
const MAX_GUARD_REJECTIONS: usize = 50;

/// Adaptive integration with log-spaced dense output
/// (`cfg.samples_per_decade` samples per decade of `1 + t`).
pub fn integrate_adaptive<T: Real, S: OdeSystem<T> + ?Sized>(
    sys: &S,
    t0: T,
    t1: T,
    y0: &[T],
    cfg: &IntegratorConfig<T>,
) -> Result<Trajectory<T>, OdeError> {
    integrate(
        sys,
        t0,
        t1,
        y0,
        cfg,
        &Sampling::LogSpaced(cfg.samples_per_decade),
        |_, _| ControlFlow::Continue(()),
    )
}

struct Dense<T> {
    r: [Vec<T>; 5],
}

impl<T: Real> Dense<T> {
    fn eval(&self, theta: T, out: &mut [T]) {
        let th1 = T::one() - theta;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.r[0][i]
                + theta
                    * (self.r[1][i]
                        + th1 * (self.r[2][i] + theta * (self.r[3][i] + th1 * self.r[4][i])));
        }
    }
}

/// General adaptive driver. `on_step` sees every accepted `(t, y)` (including
/// the initial point) and may stop the run with a reason.
pub fn integrate<T, S, F>(
    sys: &S,
    t0: T,
    t1: T,
    y0: &[T],
    cfg: &IntegratorConfig<T>,
    sampling: &Sampling<T>,
    mut on_step: F,
) -> Result<Trajectory<T>, OdeError>
where
    T: Real,
    S: OdeSystem<T> + ?Sized,
    F: FnMut(T, &[T]) -> ControlFlow<String>,
{
    cfg.validate()?;
    let n = sys.dim();
    if y0.len() != n {
        return Err(OdeError::InvalidConfig(format!(
            "initial state has length {}, system dimension is {n}",
            y0.len()
        )));
    }
    if !(t1 >= t0) {
        return Err(OdeError::InvalidConfig("t1 must not precede t0".into()));
    }
    if non_finite(y0) {
        return Err(OdeError::NonFiniteState {
            t: t0.to_f64_lossy(),
        });
    }
    let spd = match sampling {
        Sampling::LogSpaced(k) => {
            if !(T::one() + t0 > T::zero()) {
                return Err(OdeError::InvalidConfig(
                    "log-spaced sampling needs 1 + t0 > 0".into(),
                ));
            }
            *k
        }
        _ => cfg.samples_per_decade,
    };
    let sample_times: Vec<T> = match sampling {
        Sampling::LogSpaced(k) => log_spaced_times(t0, t1, *k),
        Sampling::Steps => Vec::new(),
        Sampling::At(ts) => {
            let mut v: Vec<T> = ts.iter().copied().filter(|&t| t > t0 && t < t1).collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v.dedup();
            v.insert(0, t0);
            if t1 > t0 {
                v.push(t1);
            }
            v
        }
    };

    let mut traj = Trajectory {
        times: vec![t0],
        states: vec![y0.to_vec()],
        samples_per_decade: spd,
        stats: StepStats::default(),
    };
    if let ControlFlow::Break(reason) = on_step(t0, y0) {
        return Err(OdeError::Aborted {
            t: t0.to_f64_lossy(),
            reason,
        });
    }
    if t1 == t0 {
        return Ok(traj);
    }
    let mut next_sample = 1usize;

    let c = T::lit;
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k1 = vec![T::zero(); n];
    let mut k2 = vec![T::zero(); n];
    let mut k3 = vec![T::zero(); n];
    let mut k4 = vec![T::zero(); n];
    let mut k5 = vec![T::zero(); n];
    let mut k6 = vec![T::zero(); n];
    let mut k7 = vec![T::zero(); n];
    let mut ys = vec![T::zero(); n];
    let mut y_new = vec![T::zero(); n];
    let mut buf = vec![T::zero(); n];
    sys.rhs(t, &y, &mut k1);
    traj.stats.rhs_evals += 1;
    if non_finite(&k1) {
        return Err(OdeError::NonFiniteState {
            t: t.to_f64_lossy(),
        });
    }

    let mut h = match cfg.h_init {
        Some(h) => h,
        None => {
            let h = initial_step(sys, t, &y, &k1, cfg);
            traj.stats.rhs_evals += 1;
            h
        }
    };
    let beta = c(0.04);
    let expo1 = c(0.2) - beta * c(0.75);
    let mut err_old = c(1e-4);
    let mut last_rejected = false;
    let mut guard_rejections = 0usize;
    let mut last_guard: Option<(usize, String)> = None;
    let mut attempts = 0usize;

    while t < t1 {
        if attempts >= cfg.max_steps {
            return Err(OdeError::MaxStepsExceeded {
                t: t.to_f64_lossy(),
                max_steps: cfg.max_steps,
            });
        }
        attempts += 1;
        h = h.min(cfg.h_max);
        if let Some(cap) = sys.max_step(t, &y) {
            h = h.min(cap);
        }
        let mut last = false;
        if t + c(1.01) * h >= t1 {
            h = t1 - t;
            last = true;
        }
        if !(h > c(16.0) * T::epsilon() * t.abs().max(T::min_positive_value())) {
            // a step collapse driven by the guard means the state is being
            // pushed out of the admissible set
            if let Some((at, detail)) = last_guard.take() {
                if attempts - at <= 2 * MAX_GUARD_REJECTIONS {
                    return Err(OdeError::PositivityLost {
                        t: t.to_f64_lossy(),
                        detail,
                    });
                }
            }
            return Err(OdeError::StepSizeUnderflow {
                t: t.to_f64_lossy(),
                h: h.to_f64_lossy(),
            });
        }

        for i in 0..n {
            ys[i] = y[i] + h * c(dp::A21) * k1[i];
        }
        sys.rhs(t + c(dp::C2) * h, &ys, &mut k2);
        for i in 0..n {
            ys[i] = y[i] + h * (c(dp::A31) * k1[i] + c(dp::A32) * k2[i]);
        }
        sys.rhs(t + c(dp::C3) * h, &ys, &mut k3);
        for i in 0..n {
            ys[i] = y[i] + h * (c(dp::A41) * k1[i] + c(dp::A42) * k2[i] + c(dp::A43) * k3[i]);
        }
        sys.rhs(t + c(dp::C4) * h, &ys, &mut k4);
        for i in 0..n {
            ys[i] = y[i]
                + h * (c(dp::A51) * k1[i]
                    + c(dp::A52) * k2[i]
                    + c(dp::A53) * k3[i]
                    + c(dp::A54) * k4[i]);
        }
        sys.rhs(t + c(dp::C5) * h, &ys, &mut k5);
        for i in 0..n {
            ys[i] = y[i]
                + h * (c(dp::A61) * k1[i]
                    + c(dp::A62) * k2[i]
                    + c(dp::A63) * k3[i]
                    + c(dp::A64) * k4[i]
                    + c(dp::A65) * k5[i]);
        }
        let t_new = if last { t1 } else { t + h };
        sys.rhs(t_new, &ys, &mut k6);
        for i in 0..n {
            y_new[i] = y[i]
                + h * (c(dp::A71) * k1[i]
                    + c(dp::A73) * k3[i]
                    + c(dp::A74) * k4[i]
                    + c(dp::A75) * k5[i]
                    + c(dp::A76) * k6[i]);
        }
        sys.rhs(t_new, &y_new, &mut k7);
        traj.stats.rhs_evals += 6;

        let mut err = T::zero();
        for i in 0..n {
            let e = h
                * (c(dp::E1) * k1[i]
                    + c(dp::E3) * k3[i]
                    + c(dp::E4) * k4[i]
                    + c(dp::E5) * k5[i]
                    + c(dp::E6) * k6[i]
                    + c(dp::E7) * k7[i]);
            let sc = cfg.atol + cfg.rtol * y[i].abs().max(y_new[i].abs());
            let r = e.abs() / sc;
            // NaN must propagate to the rejection branch
            if !(r <= err) {
                err = r;
            }
        }

        if !err.is_finite() || non_finite(&y_new) || non_finite(&k7) {
            traj.stats.rejected += 1;
            guard_rejections += 1;
            if guard_rejections > MAX_GUARD_REJECTIONS {
                return Err(OdeError::NonFiniteState {
                    t: t.to_f64_lossy(),
                });
            }
            h *= c(0.5);
            last_rejected = true;
            continue;
        }

        if err <= T::one() {
            if let Err(detail) = sys.admissible(t_new, &y_new) {
                traj.stats.rejected += 1;
                guard_rejections += 1;
                if guard_rejections > MAX_GUARD_REJECTIONS {
                    return Err(OdeError::PositivityLost {
                        t: t.to_f64_lossy(),
                        detail,
                    });
                }
                last_guard = Some((attempts, detail));
                h *= c(0.5);
                last_rejected = true;
                continue;
            }
            traj.stats.accepted += 1;

            match sampling {
                Sampling::Steps => {
                    traj.times.push(t_new);
                    traj.states.push(y_new.clone());
                }
                _ => {
                    let mut dense: Option<Dense<T>> = None;
                    while next_sample < sample_times.len() && sample_times[next_sample] <= t_new {
                        let ts = sample_times[next_sample];
                        if ts == t_new {
                            traj.times.push(ts);
                            traj.states.push(y_new.clone());
                        } else {
                            let d = dense.get_or_insert_with(|| {
                                let ydiff: Vec<T> = (0..n).map(|i| y_new[i] - y[i]).collect();
                                let bspl: Vec<T> = (0..n).map(|i| h * k1[i] - ydiff[i]).collect();
                                let r4: Vec<T> =
                                    (0..n).map(|i| ydiff[i] - h * k7[i] - bspl[i]).collect();
                                let r5: Vec<T> = (0..n)
                                    .map(|i| {
                                        h * (c(dp::D1) * k1[i]
                                            + c(dp::D3) * k3[i]
                                            + c(dp::D4) * k4[i]
                                            + c(dp::D5) * k5[i]
                                            + c(dp::D6) * k6[i]
                                            + c(dp::D7) * k7[i])
                                    })
                                    .collect();
                                Dense {
                                    r: [y.clone(), ydiff, bspl, r4, r5],
                                }
                            });
                            let theta = (ts - t) / h;
                            d.eval(theta, &mut buf);
                            traj.times.push(ts);
                            traj.states.push(buf.clone());
                        }
                        next_sample += 1;
                    }
                }
            }

            t = t_new;
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut k1, &mut k7);
            if let ControlFlow::Break(reason) = on_step(t, &y) {
                return Err(OdeError::Aborted {
                    t: t.to_f64_lossy(),
                    reason,
                });
            }

            let mut fac = cfg.safety
                * err.max(c(1e-300).max(T::min_positive_value())).powf(-expo1)
                * err_old.powf(beta);
            fac = fac.max(c(0.2)).min(c(5.0));
            if last_rejected {
                fac = fac.min(T::one());
            }
            err_old = err.max(c(1e-4));
            last_rejected = false;
            h *= fac;
        } else {
            traj.stats.rejected += 1;
            let fac = (cfg.safety * err.powf(-expo1)).max(c(0.2)).min(T::one());
            h *= fac;
            last_rejected = true;
        }
    }
    Ok(traj)
}

fn initial_step<T: Real, S: OdeSystem<T> + ?Sized>(
    sys: &S,
    t: T,
    y: &[T],
    f0: &[T],
    cfg: &IntegratorConfig<T>,
) -> T {
    let n = y.len();
    let c = T::lit;
    let scale = |i: usize| cfg.atol + cfg.rtol * y[i].abs();
    let rms = |v: &dyn Fn(usize) -> T| -> T {
        let nf = T::from_usize_lossy(n.max(1));
        ((0..n).map(|i| v(i) * v(i)).sum::<T>() / nf).sqrt()
    };
    let d0 = rms(&|i| y[i] / scale(i));
    let d1 = rms(&|i| f0[i] / scale(i));
    let mut h0 = if d0 < c(1e-5) || d1 < c(1e-5) {
        c(1e-6)
    } else {
        c(0.01) * d0 / d1
    };
    h0 = h0.min(cfg.h_max);
    if let Some(cap) = sys.max_step(t, y) {
        h0 = h0.min(cap);
    }
    let y1: Vec<T> = (0..n).map(|i| y[i] + h0 * f0[i]).collect();
    let mut f1 = vec![T::zero(); n];
    sys.rhs(t + h0, &y1, &mut f1);
    let d2 = rms(&|i| (f1[i] - f0[i]) / scale(i)) / h0;
    let dmax = d1.max(d2);
    let h1 = if !dmax.is_finite() {
        h0
    } else if dmax <= c(1e-15) {
        (c(1e-6)).max(h0 * c(1e-3))
    } else {
        (c(0.01) / dmax).powf(c(0.2))
    };
    let mut h = (c(100.0) * h0).min(h1).min(cfg.h_max);
    if let Some(cap) = sys.max_step(t, y) {
        h = h.min(cap);
    }
    h
}

/// Result of a fixed-step convergence study.
#[derive(Clone, Debug, PartialEq)]
pub struct OrderEstimate<T> {
    pub order: T,
    pub steps: Vec<T>,
    pub errors: Vec<T>,
}

/// Measures the empirical order of fixed-step RK4 as the least-squares
/// slope of `log(error)` against `log(h)`.
///
/// `h_list` must hold at least three steps in geometric progression. Each
/// step is adjusted to divide `t_end - t0` evenly. When the smallest error
/// sits at the rounding floor the scheme is exact on the problem and
/// [`OdeError::DegenerateOrder`] is returned.
pub fn convergence_order<T, S, E>(
    sys: &S,
    t0: T,
    y0: &[T],
    exact: E,
    t_end: T,
    h_list: &[T],
) -> Result<OrderEstimate<T>, OdeError>
where
    T: Real,
    S: OdeSystem<T> + ?Sized,
    E: Fn(T) -> Vec<T>,
{
    if h_list.len() < 3 {
        return Err(OdeError::InvalidConfig(
            "need at least three step sizes".into(),
        ));
    }
    let ratio = h_list[1] / h_list[0];
    for w in h_list.windows(2) {
        if !(w[0] > T::zero()) || ((w[1] / w[0]) / ratio - T::one()).abs() > T::lit(1e-6) {
            return Err(OdeError::InvalidConfig(
                "step sizes must be positive and in geometric progression".into(),
            ));
        }
    }
    if !(t_end > t0) {
        return Err(OdeError::InvalidConfig("t_end must exceed t0".into()));
    }
    let span = t_end - t0;
    let y_exact = exact(t_end);
    let y_scale = y_exact.iter().fold(T::one(), |m, &v| m.max(v.abs()));
    let mut steps = Vec::with_capacity(h_list.len());
    let mut errors = Vec::with_capacity(h_list.len());
    for &h in h_list {
        let n_steps = (span / h).round().to_usize().unwrap_or(1).max(1);
        let y = rk4_fixed(sys, t0, y0, t_end, n_steps)?;
        let err = y
            .iter()
            .zip(&y_exact)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()));
        let floor = T::lit(64.0) * T::epsilon() * y_scale * T::from_usize_lossy(n_steps).sqrt();
        if err <= floor {
            return Err(OdeError::DegenerateOrder);
        }
        steps.push(span / T::from_usize_lossy(n_steps));
        errors.push(err);
    }
    let lx: Vec<T> = steps.iter().map(|h| h.ln()).collect();
    let ly: Vec<T> = errors.iter().map(|e| e.ln()).collect();
    let fit = linear_fit(&lx, &ly)
        .ok_or_else(|| OdeError::InvalidConfig("step sizes have no spread".into()))?;
    Ok(OrderEstimate {
        order: fit.slope,
        steps,
        errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn constant(c: f64) -> FnSystem<impl Fn(f64, &[f64], &mut [f64])> {
        FnSystem::new(1, move |_t: f64, _y: &[f64], dy: &mut [f64]| dy[0] = c)
    }

    fn growth() -> FnSystem<impl Fn(f64, &[f64], &mut [f64])> {
        FnSystem::new(1, |_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = y[0])
    }

    fn decay() -> FnSystem<impl Fn(f64, &[f64], &mut [f64])> {
        FnSystem::new(1, |_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = -y[0])
    }

    #[test]
    fn rk4_zero_rhs() {
        assert_eq!(
            rk4_step(&constant(0.0), 0.0, &[3.5], 0.7).unwrap(),
            vec![3.5]
        );
    }

    #[test]
    fn rk4_constant_rhs_is_exact() {
        let y = rk4_step(&constant(1.0), 0.0, &[2.0], 0.25).unwrap();
        assert_eq!(y, vec![2.25]);
    }

    #[test]
    fn rk4_exponential() {
        let y = rk4_step(&growth(), 0.0, &[1.0], 0.1).unwrap();
        assert!((y[0] - 0.1f64.exp()).abs() <= 1e-7);
    }

    #[test]
    fn rk4_rejects_bad_input() {
        assert!(rk4_step(&growth(), 0.0, &[1.0], 0.0).is_err());
        let blowup = FnSystem::new(1, |_t: f64, _y: &[f64], dy: &mut [f64]| dy[0] = f64::NAN);
        assert!(matches!(
            rk4_step(&blowup, 0.0, &[1.0], 0.1),
            Err(OdeError::NonFiniteState { .. })
        ));
    }

    #[test]
    fn adaptive_decay_endpoint() {
        let cfg = IntegratorConfig::default();
        let traj = integrate_adaptive(&decay(), 0.0, 10.0, &[1.0], &cfg).unwrap();
        let end = traj.last_state().unwrap()[0];
        let exact = (-10.0f64).exp();
        assert!(
            (end - exact).abs() <= 1e-8 * exact + 1e-11,
            "{end} vs {exact}"
        );
        assert_eq!(*traj.times.last().unwrap(), 10.0);
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn adaptive_zero_span() {
        let cfg = IntegratorConfig::default();
        let traj = integrate_adaptive(&decay(), 2.0, 2.0, &[0.5], &cfg).unwrap();
        assert_eq!(traj.times, vec![2.0]);
        assert_eq!(traj.states, vec![vec![0.5]]);
    }

    #[test]
    fn dense_output_tracks_solution() {
        let cfg = IntegratorConfig::with_tolerances(1e-10, 1e-13);
        let traj = integrate_adaptive(&decay(), 0.0, 20.0, &[1.0], &cfg).unwrap();
        assert_eq!(traj.times, log_spaced_times(0.0, 20.0, 32));
        for (t, y) in traj.times.iter().zip(&traj.states) {
            let e = (-t).exp();
            assert!((y[0] - e).abs() <= 1e-9 * e + 1e-12, "t={t}");
        }
    }

    #[test]
    fn log_spacing() {
        let ts = log_spaced_times(0.0, 99.0, 2);
        let expected = [0.0, 10f64.sqrt() - 1.0, 9.0, 1000f64.sqrt() - 1.0, 99.0];
        assert_eq!(ts.len(), expected.len());
        for (a, b) in ts.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn error_signals_are_distinct() {
        let cfg = IntegratorConfig::<f64> {
            max_steps: 5,
            ..Default::default()
        };
        assert!(matches!(
            integrate_adaptive(&decay(), 0.0, 1e3, &[1.0], &cfg),
            Err(OdeError::MaxStepsExceeded { .. })
        ));

        // y' = y^2 blows up at t = 1
        let blow = FnSystem::new(1, |_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = y[0] * y[0]);
        let err =
            integrate_adaptive(&blow, 0.0, 2.0, &[1.0], &IntegratorConfig::default()).unwrap_err();
        assert!(
            matches!(err, OdeError::StepSizeUnderflow { t, .. } | OdeError::NonFiniteState { t } if t > 0.99 && t < 1.0),
            "{err:?}"
        );

        struct Positive;
        impl OdeSystem<f64> for Positive {
            fn dim(&self) -> usize {
                1
            }
            fn rhs(&self, _t: f64, _y: &[f64], dy: &mut [f64]) {
                dy[0] = -1.0;
            }
            fn admissible(&self, _t: f64, y: &[f64]) -> Result<(), String> {
                if y[0] > 0.0 {
                    Ok(())
                } else {
                    Err("y <= 0".into())
                }
            }
        }
        let err = integrate_adaptive(&Positive, 0.0, 2.0, &[1.0], &IntegratorConfig::default())
            .unwrap_err();
        match err {
            OdeError::PositivityLost { t, detail } => {
                assert!(t < 1.0 && t > 0.99);
                assert_eq!(detail, "y <= 0");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_config() {
        let cfg = IntegratorConfig::<f64> {
            rtol: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = IntegratorConfig::<f64> {
            h_init: Some(2.0),
            h_max: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = IntegratorConfig::<f64>::default();
        assert!(integrate_adaptive(&decay(), 1.0, 0.0, &[1.0], &cfg).is_err());
        assert!(integrate_adaptive(&decay(), 0.0, 1.0, &[1.0, 2.0], &cfg).is_err());
    }

    #[test]
    fn determinism() {
        let cfg = IntegratorConfig::default();
        let a = integrate_adaptive(&growth(), 0.0, 5.0, &[1.0], &cfg).unwrap();
        let b = integrate_adaptive(&growth(), 0.0, 5.0, &[1.0], &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rk4_order_on_exponential() {
        let est = convergence_order(
            &growth(),
            0.0,
            &[1.0],
            |t| vec![t.exp()],
            1.0,
            &[0.1, 0.05, 0.025, 0.0125],
        )
        .unwrap();
        assert!(est.order >= 3.8 && est.order <= 4.2, "order {}", est.order);
    }

    #[test]
    fn rk4_order_degenerate() {
        let r = convergence_order(
            &constant(1.0),
            0.0,
            &[0.0],
            |t| vec![t],
            1.0,
            &[0.1, 0.05, 0.025],
        );
        assert_eq!(r, Err(OdeError::DegenerateOrder));
        let r = convergence_order(&constant(1.0), 0.0, &[0.0], |t| vec![t], 1.0, &[0.1, 0.05]);
        assert!(matches!(r, Err(OdeError::InvalidConfig(_))));
    }

    #[test]
    fn step_observer_sees_every_step() {
        let cfg = IntegratorConfig::default();
        let mut count = 0;
        let traj = integrate(
            &decay(),
            0.0,
            3.0,
            &[1.0],
            &cfg,
            &Sampling::Steps,
            |_, _| {
                count += 1;
                ControlFlow::Continue(())
            },
        )
        .unwrap();
        assert_eq!(count, traj.len());
        assert_eq!(traj.stats.accepted + 1, traj.len());
        let err = integrate(
            &decay(),
            0.0,
            3.0,
            &[1.0],
            &cfg,
            &Sampling::Steps,
            |t, _| {
                if t > 1.0 {
                    ControlFlow::Break("stop".into())
                } else {
                    ControlFlow::Continue(())
                }
            },
        )
        .unwrap_err();
        assert!(matches!(err, OdeError::Aborted { .. }));
    }

    #[test]
    fn single_precision_integration() {
        let cfg = IntegratorConfig::<f32>::with_tolerances(1e-5, 1e-7);
        let sys = FnSystem::new(1, |_t: f32, y: &[f32], dy: &mut [f32]| dy[0] = -y[0]);
        let traj = integrate_adaptive(&sys, 0.0f32, 2.0, &[1.0], &cfg).unwrap();
        let end = traj.last_state().unwrap()[0];
        assert!((end - (-2.0f32).exp()).abs() < 1e-4);
    }
}

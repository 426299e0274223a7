use std::io::Write;

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};

use rhflow::io::write_trajectory_csv;
use rhflow::nil3::{
    self, bounds_check, default_window, exact_ricci_solution, fit_log_decay, fit_log_growth,
    fit_power_law, phi_drift, power_regime_prefactors, predicted_constants, AsymptoticFit,
    Component, CouplingSchedule, MapSlope, Nil3Error, Nil3Params, Nil3State,
};
use rhflow::ode::IntegratorConfig;
use rhflow::Trajectory64;

use crate::args::{CouplingArg, IntegratorArgs, Nil3Args};
use crate::report::{create_file, emit_json, print_checks, Check, Status};

const COMPONENTS: [Component; 3] = [Component::A, Component::B, Component::C];

pub fn integrator_config(
    args: &IntegratorArgs,
    samples_per_decade: usize,
) -> Result<IntegratorConfig<f64>> {
    let cfg = IntegratorConfig {
        samples_per_decade,
        ..IntegratorConfig::with_tolerances(args.rtol, args.atol)
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn coupling(arg: CouplingArg) -> Result<CouplingSchedule<f64>, Nil3Error> {
    match arg {
        CouplingArg::Zero => Ok(CouplingSchedule::zero()),
        CouplingArg::Const { c0 } => CouplingSchedule::constant(c0),
        CouplingArg::Power { c0, r } => CouplingSchedule::power(c0, r),
    }
}

/// Parameters and integrator settings, validated before anything runs.
pub struct Nil3Setup {
    pub params: Nil3Params<f64>,
    pub cfg: IntegratorConfig<f64>,
    pub window: (f64, f64),
}

pub fn setup(args: &Nil3Args) -> Result<Nil3Setup> {
    let state0 = Nil3State::new(args.a0, args.b0, args.c0)?;
    let params = Nil3Params::new(state0, MapSlope(args.a), coupling(args.coupling)?)?;
    if !(args.t_end > 0.0) || !args.t_end.is_finite() {
        bail!("--t-end must be positive and finite, got {}", args.t_end);
    }
    if args.samples_per_decade == 0 {
        bail!("--samples-per-decade must be >= 1");
    }
    let cfg = integrator_config(&args.integrator, args.samples_per_decade)?;
    let window = args
        .window
        .map(|w| (w.0, w.1))
        .unwrap_or_else(|| default_window(args.t_end));
    Ok(Nil3Setup {
        params,
        cfg,
        window,
    })
}

fn fit_json(fit: Result<AsymptoticFit<f64>, Nil3Error>) -> Value {
    match fit {
        Ok(f) => json!({
            "exponent": f.exponent,
            "prefactor": f.prefactor,
            "r_squared": f.r_squared,
            "samples": f.samples,
        }),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

fn rel_gap(x: f64, target: f64) -> f64 {
    (x / target - 1.0).abs()
}

/// Largest relative deviation from the closed form, when one exists.
fn oracle_error(traj: &Trajectory64, params: &Nil3Params<f64>) -> Option<f64> {
    if !params.coupling.is_zero() && params.slope.0 != 0.0 {
        return None;
    }
    exact_ricci_solution(0.0, &params.state0).ok()?;
    let mut worst: f64 = 0.0;
    for (t, y) in traj.times.iter().zip(&traj.states) {
        let exact = exact_ricci_solution(*t, &params.state0).ok()?.to_array();
        for (v, e) in y.iter().zip(exact) {
            worst = worst.max(rel_gap(*v, e));
        }
    }
    Some(worst)
}

fn regime_json(traj: &Trajectory64, params: &Nil3Params<f64>, window: (f64, f64)) -> Result<Value> {
    let pred = predicted_constants(params);
    let mut out = json!({});
    if let Ok(pred) = &pred {
        out["predicted"] = json!({
            "K": pred.k,
            "ricci": {
                "A_prefactor": pred.ricci.a_prefactor,
                "B_prefactor": pred.ricci.b_prefactor,
                "C_prefactor": pred.ricci.c_prefactor,
            },
        });
        if let Some(c) = pred.constant {
            out["predicted"]["constant"] = json!({
                "A_rate": c.a_rate,
                "kappa_B": c.kappa_b,
                "C_prefactor": c.c_prefactor,
                "C_prefactor_quoted": c.c_prefactor_quoted,
            });
            let t_end = *traj.times.last().unwrap_or(&0.0);
            let a_end = traj.last_state().map(|y| y[0]).unwrap_or(f64::NAN);
            let kappa = fit_log_growth(traj, Component::B, window);
            let c_decay = fit_log_decay(traj, Component::C, window);
            let mut disc = json!({
                "A_over_rate_t": a_end / (c.a_rate * t_end),
                "C_prefactor_consistent": c.c_prefactor,
                "C_prefactor_quoted": c.c_prefactor_quoted,
            });
            if let Ok(f) = &c_decay {
                disc["C_prefactor_measured"] = json!(f.prefactor);
                disc["gap_to_consistent"] = json!(rel_gap(f.prefactor, c.c_prefactor));
                disc["gap_to_quoted"] = json!(rel_gap(f.prefactor, c.c_prefactor_quoted));
            }
            out["fits"] = json!({
                "B_log_growth": fit_json(kappa),
                "C_log_decay": fit_json(c_decay),
            });
            out["discrepancy"] = disc;
        }
        if let Some(p) = pred.power {
            out["predicted"]["power"] = json!({
                "exponents": p.exponents,
                "established": p.established,
            });
            if let Ok(fa) = fit_power_law(traj, Component::A, window) {
                let (b, c) = power_regime_prefactors(fa.prefactor, params.phi0);
                out["predicted"]["power"]["alpha"] = json!(fa.prefactor);
                out["predicted"]["power"]["B_prefactor_from_alpha"] = json!(b);
                out["predicted"]["power"]["C_prefactor_from_alpha"] = json!(c);
            }
        }
    } else if let Err(e) = pred {
        out["predicted"] = json!({ "error": e.to_string() });
    }
    Ok(out)
}

pub fn run(args: &Nil3Args, out: &mut dyn Write) -> Result<Status> {
    let Nil3Setup {
        params,
        cfg,
        window,
    } = setup(args)?;
    let traj = nil3::integrate(&params, args.t_end, &cfg).context("integration failed")?;

    if let Some(path) = &args.csv {
        write_trajectory_csv(create_file(path)?, &traj)?;
    }

    let drift = phi_drift(&traj, params.phi0);
    let bounds = bounds_check(&traj, &params);
    let mut checks = vec![
        Check::at_most("Phi drift", drift, args.phi_tol),
        Check::at_most(
            "growth bound violations",
            bounds.violations.len() as f64,
            0.0,
        ),
    ];
    let oracle = oracle_error(&traj, &params);
    if let Some(err) = oracle {
        checks.push(Check::at_most(
            "closed-form relative error",
            err,
            args.oracle_tol,
        ));
    }
    let status = Status::from_checks(&checks);

    let mut fits = json!({});
    let mut summary = json!({
        "scenario": "nil3",
        "config": args,
        "samples": traj.len(),
        "steps": {
            "accepted": traj.stats.accepted,
            "rejected": traj.stats.rejected,
            "rhs_evals": traj.stats.rhs_evals,
        },
        "final": traj.last_state().map(|y| json!({
            "t": traj.times.last(),
            "A": y[0],
            "B": y[1],
            "C": y[2],
        })),
        "phi0": params.phi0,
        "phi_drift": drift,
        "oracle_max_rel_err": oracle,
        "bounds": {
            "ok": bounds.ok(),
            "worst_slack": bounds.worst_slack,
            "worst_bound": bounds.worst_bound.map(|b| b.name()),
            "worst_time": bounds.worst_time,
            "violations": bounds.violations.len(),
        },
    });
    for comp in COMPONENTS {
        let fit = fit_power_law(&traj, comp, window);
        summary[format!("exponent_{}", comp.name())] = json!(fit.as_ref().ok().map(|f| f.exponent));
        fits[comp.name()] = fit_json(fit);
    }
    let regime = regime_json(&traj, &params, window)?;
    if let Some(extra) = regime.get("fits").and_then(Value::as_object) {
        for (k, v) in extra {
            fits[k] = v.clone();
        }
    }
    fits["window"] = json!([window.0, window.1]);
    summary["fits"] = fits;
    for key in ["predicted", "discrepancy"] {
        if let Some(v) = regime.get(key) {
            summary[key] = v.clone();
        }
    }
    summary["checks"] = json!(checks);
    summary["status"] = json!(status.label());

    emit_json(out, args.json.as_deref(), &summary)?;
    if args.json.is_some() {
        print_checks(out, &checks)?;
    }
    Ok(status)
}

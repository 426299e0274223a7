use std::io::Write;

use anyhow::{bail, Context, Result};
use serde_json::json;

use rhflow::linalg::Mat;
use rhflow::nil3::{self, blowdown, exact_ricci_trajectory, flow_residual, Nil3Params, Nil3State};
use rhflow::rrfs::{
    random_smooth_state, tension_g_general_with, tension_g_simplified, RandomFieldSpec,
};
use rhflow::spd::christoffel_with_inverse;

use crate::args::{CheckKind, VerifyArgs};
use crate::nil3_cmd::integrator_config;
use crate::report::{emit_json, print_checks, Check, Status};

const ORACLE_SAMPLES_PER_DECADE: usize = 32;

fn tension_check(args: &VerifyArgs) -> Result<Check> {
    let st = random_smooth_state(&RandomFieldSpec::new(
        args.n,
        args.fiber_dim,
        args.grid,
        args.seed,
    ))?;
    let general = if args.corrupt_christoffel {
        tension_g_general_with(&st, &|gi: &Mat<f64>, x: &Mat<f64>, y: &Mat<f64>| {
            christoffel_with_inverse(gi, x, y).scaled(-1.0)
        })?
    } else {
        tension_g_general_with(&st, &christoffel_with_inverse)?
    };
    let simple = tension_g_simplified(&st)?;
    let scale = simple
        .iter()
        .map(Mat::max_abs)
        .fold(f64::MIN_POSITIVE, f64::max);
    let diff = general
        .iter()
        .zip(&simple)
        .map(|(a, b)| (a - b).max_abs())
        .fold(0.0, f64::max);
    Ok(Check::at_most(
        "tension identity relative residual",
        diff / scale,
        args.tension_tol,
    ))
}

/// Blowdowns of the closed-form Ricci solution from unit data.
fn blowdown_checks(args: &VerifyArgs) -> Result<Vec<Check>> {
    let cfg = integrator_config(&args.integrator, ORACLE_SAMPLES_PER_DECADE)?;
    let state0 = Nil3State::new(1.0, 1.0, 1.0)?;
    let params = Nil3Params::ricci(state0);
    let source = exact_ricci_trajectory(&state0, args.t_end, ORACLE_SAMPLES_PER_DECADE)?;
    let base = flow_residual(&source, &params)?;
    let mut checks = Vec::new();
    for &s in &args.s {
        let (ps, ts) = blowdown(&params, &source, s, None)?;
        let res = flow_residual(&ts, &ps)?;
        checks.push(Check::at_most(
            format!("blowdown s={s} residual (10x source)"),
            res,
            10.0 * base,
        ));
        let t_end = *ts.times.last().unwrap();
        let again = nil3::integrate(&ps, t_end, &cfg).context("integrating rescaled data")?;
        let end = again.last_state().unwrap();
        let expect = ts.last_state().unwrap();
        let err = end
            .iter()
            .zip(expect)
            .map(|(a, b)| (a / b - 1.0).abs())
            .fold(0.0, f64::max);
        checks.push(Check::at_most(
            format!("blowdown s={s} re-integration (10x rtol)"),
            err,
            10.0 * args.integrator.rtol,
        ));
    }
    Ok(checks)
}

pub fn run(args: &VerifyArgs, out: &mut dyn Write) -> Result<Status> {
    if !(1..=2).contains(&args.n) {
        bail!("--n must be 1 or 2, got {}", args.n);
    }
    if args.fiber_dim == 0 {
        bail!("--N must be >= 1");
    }
    if !(args.t_end > 0.0) || !args.t_end.is_finite() {
        bail!("--t-end must be positive and finite");
    }
    if let Some(s) = args.s.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
        bail!("blowdown factor must be positive, got {s}");
    }
    let mut checks = Vec::new();
    if matches!(args.check, CheckKind::Tension | CheckKind::All) {
        checks.push(tension_check(args)?);
    }
    if matches!(args.check, CheckKind::Blowdown | CheckKind::All) {
        checks.extend(blowdown_checks(args)?);
    }
    let status = Status::from_checks(&checks);
    print_checks(out, &checks)?;
    if let Some(path) = &args.json {
        let summary = json!({
            "scenario": "verify",
            "config": args,
            "checks": checks,
            "status": status.label(),
        });
        emit_json(out, Some(path), &summary)?;
    }
    Ok(status)
}

use std::fs;
use std::io::Write;

use anyhow::{bail, Context, Result};
use serde_json::json;

use rhflow::io::write_diagnostics_csv;
use rhflow::linalg::Mat;
use rhflow::ode::IntegratorConfig;
use rhflow::rrfs::{
    integrate_rrfs, random_smooth_state, read_snapshot, write_snapshot, FlowMode, PeriodicGrid,
    RandomFieldSpec, RescalingMode, RescalingSpec, RrfsState,
};

use crate::args::{InitKind, ModeArg, RescalingArg, RrfsArgs};
use crate::nil3_cmd::integrator_config;
use crate::report::{create_file, emit_json, print_checks, Check, Status};

pub struct RrfsSetup {
    pub state: RrfsState<f64>,
    pub spec: RescalingSpec<f64>,
    pub mode: FlowMode,
    pub cfg: IntegratorConfig<f64>,
}

pub fn setup(args: &RrfsArgs) -> Result<RrfsSetup> {
    if !(args.t_end >= 0.0) || !args.t_end.is_finite() {
        bail!("--t-end must be finite and >= 0, got {}", args.t_end);
    }
    if !(args.c_coupling.is_finite()) {
        bail!("--c-coupling must be finite");
    }
    if let Some(t) = args.snapshot_times.iter().find(|t| !t.is_finite()) {
        bail!("snapshot time {t} is not finite");
    }
    let state = match &args.input {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            read_snapshot(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => {
            if !(1..=2).contains(&args.n) {
                bail!("--n must be 1 or 2, got {}", args.n);
            }
            if args.fiber_dim == 0 {
                bail!("--N must be >= 1");
            }
            match args.init {
                InitKind::Flat => {
                    let grid = PeriodicGrid::uniform(args.n, args.grid, args.period)?;
                    RrfsState::flat(grid, &Mat::identity(args.fiber_dim))?
                }
                InitKind::Random => random_smooth_state(&RandomFieldSpec {
                    n_base: args.n,
                    fiber_dim: args.fiber_dim,
                    size: args.grid,
                    period: args.period,
                    seed: args.seed,
                    modes: args.modes,
                    amplitude: args.amplitude,
                    metric_amplitude: args.metric_amplitude,
                    connection_amplitude: args.connection_amplitude,
                })?,
            }
        }
    };
    let mode = match args.rescaling {
        RescalingArg::Off => RescalingMode::Off,
        RescalingArg::Volume => RescalingMode::Volume,
        RescalingArg::Const { s } if s.is_finite() => RescalingMode::Constant(s),
        RescalingArg::Const { s } => bail!("rescaling constant must be finite, got {s}"),
    };
    let flow_mode = match args.mode {
        ModeArg::Full => FlowMode::Full,
        ModeArg::Hmf => FlowMode::HarmonicMapOnly,
    };
    Ok(RrfsSetup {
        state,
        spec: RescalingSpec {
            mode,
            c_coupling: args.c_coupling,
        },
        mode: flow_mode,
        cfg: integrator_config(&args.integrator, 1)?,
    })
}

pub fn run(args: &RrfsArgs, out: &mut dyn Write) -> Result<Status> {
    let RrfsSetup {
        state,
        spec,
        mode,
        cfg,
    } = setup(args)?;
    let result = integrate_rrfs(&state, &spec, mode, args.t_end, &cfg, &args.snapshot_times)
        .context("integration failed")?;

    let mut snapshot_paths = Vec::new();
    if let Some(dir) = &args.snapshot_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (k, (_, st)) in result.snapshots.iter().enumerate() {
            let path = dir.join(format!("snapshot_{k}.txt"));
            fs::write(&path, write_snapshot(st))
                .with_context(|| format!("writing {}", path.display()))?;
            snapshot_paths.push(path);
        }
    }
    if let Some(path) = &args.csv {
        write_diagnostics_csv(create_file(path)?, &result.diagnostics)?;
    }

    let diag = &result.diagnostics;
    let mut checks = Vec::new();
    let connection_free = state.a.iter().all(|m| m.max_abs() == 0.0);
    let plain_heat_flow = matches!(spec.mode, RescalingMode::Off)
        && mode == FlowMode::HarmonicMapOnly
        && connection_free;
    if plain_heat_flow {
        let worst_rise = diag
            .windows(2)
            .map(|w| w[1].energy - w[0].energy)
            .fold(0.0, f64::max);
        checks.push(Check::at_most("energy increase", worst_rise, 0.0));
    }
    if matches!(spec.mode, RescalingMode::Volume) {
        let v0 = diag[0].volume;
        let drift = diag
            .iter()
            .map(|d| (d.volume / v0 - 1.0).abs())
            .fold(0.0, f64::max);
        checks.push(Check::at_most(
            "relative volume drift",
            drift,
            args.volume_tol,
        ));
    }
    let status = Status::from_checks(&checks);

    let summary = json!({
        "scenario": "rrfs",
        "config": args,
        "nodes": state.len(),
        "steps": {
            "accepted": result.stats.accepted,
            "rejected": result.stats.rejected,
            "rhs_evals": result.stats.rhs_evals,
        },
        "series": {
            "t": diag.iter().map(|d| d.t).collect::<Vec<_>>(),
            "energy": diag.iter().map(|d| d.energy).collect::<Vec<_>>(),
            "volume": diag.iter().map(|d| d.volume).collect::<Vec<_>>(),
            "s": diag.iter().map(|d| d.s).collect::<Vec<_>>(),
        },
        "snapshots": result.snapshots.iter().enumerate().map(|(k, (t, _))| json!({
            "t": t,
            "path": snapshot_paths.get(k).map(|p| p.display().to_string()),
        })).collect::<Vec<_>>(),
        "checks": checks,
        "status": status.label(),
    });
    emit_json(out, args.json.as_deref(), &summary)?;
    if args.json.is_some() {
        print_checks(out, &checks)?;
    }
    Ok(status)
}

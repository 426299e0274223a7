use std::fs::File;
use std::io::Write;

use anyhow::{Context, Result};
use serde_json::json;

use rhflow::io::read_trajectory_csv;
use rhflow::nil3::{default_window, fit_log_decay, fit_log_growth, fit_power_law, Component};

use crate::args::{ComponentArg, FitArgs, FitKind};
use crate::report::{emit_json, Status};

pub fn run(args: &FitArgs, out: &mut dyn Write) -> Result<Status> {
    let file = File::open(&args.csv).with_context(|| format!("opening {}", args.csv.display()))?;
    let traj = read_trajectory_csv::<f64, _>(file, 0)
        .with_context(|| format!("reading {}", args.csv.display()))?;
    let t_end = *traj.times.last().context("trajectory file has no rows")?;
    let window = args
        .window
        .map(|w| (w.0, w.1))
        .unwrap_or_else(|| default_window(t_end));
    let components: &[Component] = match args.component {
        ComponentArg::A => &[Component::A],
        ComponentArg::B => &[Component::B],
        ComponentArg::C => &[Component::C],
        ComponentArg::All => &[Component::A, Component::B, Component::C],
    };
    let mut fits = json!({});
    for &comp in components {
        let fit = match args.kind {
            FitKind::Power => fit_power_law(&traj, comp, window),
            FitKind::LogGrowth => fit_log_growth(&traj, comp, window),
            FitKind::LogDecay => fit_log_decay(&traj, comp, window),
        }
        .with_context(|| format!("fitting {}", comp.name()))?;
        fits[comp.name()] = json!({
            "exponent": fit.exponent,
            "prefactor": fit.prefactor,
            "r_squared": fit.r_squared,
            "samples": fit.samples,
        });
    }
    let summary = json!({
        "scenario": "fit",
        "config": args,
        "window": [window.0, window.1],
        "fits": fits,
    });
    emit_json(out, args.json.as_deref(), &summary)?;
    Ok(Status::Ok)
}

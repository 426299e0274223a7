use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

/// Outcome of a command that ran to completion.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Names of the failed checks.
    ChecksFailed(Vec<String>),
}

impl Status {
    pub fn from_checks(checks: &[Check]) -> Self {
        let failed: Vec<String> = checks
            .iter()
            .filter(|c| !c.ok)
            .map(|c| c.name.clone())
            .collect();
        if failed.is_empty() {
            Status::Ok
        } else {
            Status::ChecksFailed(failed)
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::ChecksFailed(_) => "failed",
        }
    }
}

/// One thresholded assertion; `ok` iff `value <= threshold`.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub ok: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            ok: value <= threshold,
        }
    }
}

pub fn print_checks(out: &mut dyn Write, checks: &[Check]) -> Result<()> {
    for c in checks {
        writeln!(
            out,
            "{} {}: {:e} (threshold {:e})",
            if c.ok { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.threshold
        )?;
    }
    Ok(())
}

/// Pretty JSON to `path`, or to `out` when no path is given.
pub fn emit_json<S: Serialize>(out: &mut dyn Write, path: Option<&Path>, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

pub fn create_file(path: &Path) -> Result<fs::File> {
    fs::File::create(path).with_context(|| format!("creating {}", path.display()))
}

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::thread;

use anyhow::{anyhow, bail, Context, Result};
use clap::Parser;
use serde::Deserialize;

use crate::args::{Cli, Command, RunArgs};
use crate::report::Status;

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Nil3,
    Rrfs,
    VerifyTension,
    BlowdownCheck,
    Fit,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub name: Option<String>,
    pub scenario: Scenario,
    #[serde(default)]
    pub args: Vec<String>,
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchFile {
    pub run: Vec<RunBlock>,
}

impl RunBlock {
    fn argv(&self) -> Result<Vec<String>> {
        let mut argv = vec!["rhflow".to_string()];
        let head: &[&str] = match self.scenario {
            Scenario::Nil3 => &["nil3"],
            Scenario::Rrfs => &["rrfs"],
            Scenario::VerifyTension => &["verify", "--check", "tension"],
            Scenario::BlowdownCheck => &["verify", "--check", "blowdown"],
            Scenario::Fit => &["fit"],
        };
        argv.extend(head.iter().map(|s| s.to_string()));
        argv.extend(self.args.iter().cloned());
        if let Some(seed) = self.seed {
            if matches!(self.scenario, Scenario::Nil3 | Scenario::Fit) {
                bail!("scenario {:?} takes no seed", self.scenario);
            }
            argv.push("--seed".into());
            argv.push(seed.to_string());
        }
        Ok(argv)
    }
}

fn outputs(cmd: &Command) -> Vec<PathBuf> {
    let mut v: Vec<Option<&PathBuf>> = Vec::new();
    match cmd {
        Command::Nil3(a) => v.extend([a.csv.as_ref(), a.json.as_ref()]),
        Command::Rrfs(a) => v.extend([a.csv.as_ref(), a.json.as_ref(), a.snapshot_dir.as_ref()]),
        Command::Verify(a) => v.push(a.json.as_ref()),
        Command::Fit(a) => v.push(a.json.as_ref()),
        Command::Run(_) => {}
    }
    v.into_iter().flatten().cloned().collect()
}

/// Parses and checks every block before any of them runs.
pub fn load(path: &PathBuf) -> Result<Vec<(String, Command)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: BatchFile =
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if file.run.is_empty() {
        bail!("{} has no [[run]] blocks", path.display());
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (k, block) in file.run.iter().enumerate() {
        let name = block.name.clone().unwrap_or_else(|| format!("run {k}"));
        let argv = block.argv().with_context(|| name.clone())?;
        let cli = Cli::try_parse_from(&argv)
            .map_err(|e| anyhow!("{name}: {}", e.render().to_string().trim_end()))?;
        for p in outputs(&cli.command) {
            if !seen.insert(p.clone()) {
                bail!("{name}: output {} is shared with another run", p.display());
            }
        }
        crate::validate(&cli.command).with_context(|| name.clone())?;
        out.push((name, cli.command));
    }
    Ok(out)
}

pub fn run(args: &RunArgs, out: &mut dyn Write) -> Result<Status> {
    let runs = load(&args.config)?;
    let results: Vec<(Vec<u8>, Result<Status>)> = thread::scope(|scope| {
        let handles: Vec<_> = runs
            .iter()
            .map(|(_, cmd)| {
                scope.spawn(move || {
                    let mut buf = Vec::new();
                    let r = crate::execute(cmd, &mut buf);
                    (buf, r)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| (Vec::new(), Err(anyhow!("run panicked"))))
            })
            .collect()
    });
    let mut failed = Vec::new();
    let mut errors = Vec::new();
    for ((name, _), (buf, r)) in runs.iter().zip(results) {
        let label = match &r {
            Ok(s) => s.label().to_string(),
            Err(e) => format!("error: {e:#}"),
        };
        writeln!(out, "== {name}: {label}")?;
        out.write_all(&buf)?;
        match r {
            Ok(Status::Ok) => {}
            Ok(Status::ChecksFailed(names)) => {
                failed.extend(names.into_iter().map(|n| format!("{name}: {n}")))
            }
            Err(e) => errors.push(format!("{name}: {e:#}")),
        }
    }
    if !errors.is_empty() {
        bail!(errors.join("; "));
    }
    Ok(if failed.is_empty() {
        Status::Ok
    } else {
        Status::ChecksFailed(failed)
    })
}

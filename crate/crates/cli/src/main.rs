//! `rhflow` command-line driver.
//!
//! Exit codes: 0 on success, 2 when a run completes but one of its checks
//! fails, 1 on argument, input or integration errors.

// negated comparisons are how NaN gets rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod batch;
mod fit_cmd;
mod nil3_cmd;
mod report;
mod rrfs_cmd;
mod verify;

use std::io::{self, Write};
use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;

use args::{Cli, Command};
use report::Status;

/// Runs the parameter checks of a command without computing anything.
pub(crate) fn validate(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Nil3(a) => nil3_cmd::setup(a).map(|_| ()),
        Command::Rrfs(a) => rrfs_cmd::setup(a).map(|_| ()),
        Command::Verify(_) | Command::Fit(_) | Command::Run(_) => Ok(()),
    }
}

pub(crate) fn execute(cmd: &Command, out: &mut dyn Write) -> Result<Status> {
    match cmd {
        Command::Nil3(a) => nil3_cmd::run(a, out),
        Command::Rrfs(a) => rrfs_cmd::run(a, out),
        Command::Verify(a) => verify::run(a, out),
        Command::Fit(a) => fit_cmd::run(a, out),
        Command::Run(a) => batch::run(a, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let result = execute(&cli.command, &mut out);
    let _ = out.flush();
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::ChecksFailed(names)) => {
            for n in names {
                eprintln!("check failed: {n}");
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

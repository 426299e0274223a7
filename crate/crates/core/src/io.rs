//! CSV output for trajectories and run diagnostics.
//!
//! Numbers are written in scientific notation with 17 significant digits.

use std::io::{Read, Write};

use thiserror::Error;

use crate::ode::{StepStats, Trajectory};
use crate::rrfs::Diagnostics;
use crate::scalar::Real;

pub const TRAJECTORY_HEADER: [&str; 5] = ["t", "A", "B", "C", "Phi"];
pub const DIAGNOSTICS_HEADER: [&str; 4] = ["t", "energy", "volume", "s"];

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("unexpected header {found:?}, expected {expected:?}")]
    Header {
        found: Vec<String>,
        expected: Vec<String>,
    },
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
}

pub fn format_num<T: Real>(v: T) -> String {
    format!("{v:.16e}")
}

fn write_rows<W: Write>(
    out: W,
    header: &[&str],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<(), IoError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `t,A,B,C,Phi` rows with `Phi = B C`.
pub fn write_trajectory_csv<T: Real, W: Write>(
    out: W,
    traj: &Trajectory<T>,
) -> Result<(), IoError> {
    let rows = traj.times.iter().zip(&traj.states).map(|(&t, y)| {
        vec![
            format_num(t),
            format_num(y[0]),
            format_num(y[1]),
            format_num(y[2]),
            format_num(y[1] * y[2]),
        ]
    });
    write_rows(out, &TRAJECTORY_HEADER, rows)
}

pub fn write_diagnostics_csv<T: Real, W: Write>(
    out: W,
    diag: &[Diagnostics<T>],
) -> Result<(), IoError> {
    let rows = diag.iter().map(|d| {
        vec![
            format_num(d.t),
            format_num(d.energy),
            format_num(d.volume),
            format_num(d.s),
        ]
    });
    write_rows(out, &DIAGNOSTICS_HEADER, rows)
}

/// Reads a `t,A,B,C,Phi` file back into a trajectory; the `Phi` column is
/// ignored.
pub fn read_trajectory_csv<T: Real, R: Read>(
    input: R,
    samples_per_decade: usize,
) -> Result<Trajectory<T>, IoError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header != TRAJECTORY_HEADER {
        return Err(IoError::Header {
            found: header,
            expected: TRAJECTORY_HEADER.iter().map(|s| s.to_string()).collect(),
        });
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|s| {
                s.trim().parse::<T>().map_err(|_| IoError::Row {
                    row: i + 1,
                    message: format!("cannot parse {s:?}"),
                })
            })
            .collect::<Result<Vec<T>, _>>()?;
        if vals.len() != 5 {
            return Err(IoError::Row {
                row: i + 1,
                message: format!("expected 5 columns, found {}", vals.len()),
            });
        }
        if let Some(&prev) = times.last() {
            if !(vals[0] > prev) {
                return Err(IoError::Row {
                    row: i + 1,
                    message: "times must be strictly increasing".into(),
                });
            }
        }
        times.push(vals[0]);
        states.push(vals[1..4].to_vec());
    }
    Ok(Trajectory {
        times,
        states,
        samples_per_decade,
        stats: StepStats::default(),
    })
}

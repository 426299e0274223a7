//! Plain-text field snapshots.
//!
//! ```text
//! n N size_1 .. size_n spacing_1 .. spacing_n
//! g entries, A entries, G entries (row-major, one node per line)
//! ```
//!
//! Numbers are written with 17 significant digits, which round-trips `f64`
//! exactly.

use std::fmt::Write as _;

use crate::linalg::Mat;
use crate::scalar::Real;

use super::{PeriodicGrid, RrfsError, RrfsState};

fn push_num<T: Real>(out: &mut String, v: T) {
    if !out.is_empty() && !out.ends_with('\n') {
        out.push(' ');
    }
    let _ = write!(out, "{v:.16e}");
}

pub fn write_snapshot<T: Real>(state: &RrfsState<T>) -> String {
    let grid = state.grid();
    let mut out = format!("{} {}", state.n_base(), state.fiber_dim());
    for s in grid.sizes() {
        let _ = write!(out, " {s}");
    }
    for &h in grid.spacing() {
        push_num(&mut out, h);
    }
    out.push('\n');
    for k in 0..state.len() {
        for m in [&state.g[k], &state.a[k], &state.fiber[k]] {
            for &v in m.as_slice() {
                push_num(&mut out, v);
            }
        }
        out.push('\n');
    }
    out
}

fn bad(line: usize, message: impl Into<String>) -> RrfsError {
    RrfsError::Snapshot {
        line,
        message: message.into(),
    }
}

fn parse<V: std::str::FromStr>(tok: &str, line: usize) -> Result<V, RrfsError> {
    tok.parse()
        .map_err(|_| bad(line, format!("cannot parse {tok:?}")))
}

pub fn read_snapshot<T: Real>(text: &str) -> Result<RrfsState<T>, RrfsError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| bad(1, "empty snapshot"))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() < 2 {
        return Err(bad(1, "header needs n and N"));
    }
    let n: usize = parse(toks[0], 1)?;
    let nf: usize = parse(toks[1], 1)?;
    if !(1..=2).contains(&n) || toks.len() != 2 + 2 * n {
        return Err(bad(1, "header must be: n N sizes... spacings..."));
    }
    let sizes = toks[2..2 + n]
        .iter()
        .map(|t| parse(t, 1))
        .collect::<Result<Vec<usize>, _>>()?;
    let spacing = toks[2 + n..]
        .iter()
        .map(|t| parse(t, 1))
        .collect::<Result<Vec<T>, _>>()?;
    let grid = PeriodicGrid::new(sizes, spacing)?;
    let width = n * n + n * nf + nf * nf;
    let mut g = Vec::with_capacity(grid.len());
    let mut a = Vec::with_capacity(grid.len());
    let mut fiber = Vec::with_capacity(grid.len());
    for (idx, line) in lines {
        let vals = line
            .split_whitespace()
            .map(|t| parse(t, idx + 1))
            .collect::<Result<Vec<T>, _>>()?;
        if vals.len() != width {
            return Err(bad(
                idx + 1,
                format!("expected {width} values, found {}", vals.len()),
            ));
        }
        g.push(Mat::from_row_major(n, n, vals[..n * n].to_vec()));
        a.push(Mat::from_row_major(
            n,
            nf,
            vals[n * n..n * n + n * nf].to_vec(),
        ));
        fiber.push(Mat::from_row_major(nf, nf, vals[n * n + n * nf..].to_vec()));
    }
    if g.len() != grid.len() {
        return Err(bad(
            0,
            format!("expected {} node lines, found {}", grid.len(), g.len()),
        ));
    }
    RrfsState::new(grid, nf, g, a, fiber)
}

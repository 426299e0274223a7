//! Seeded smooth periodic fields for tests and verification runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{sym_exp, Mat};
use crate::scalar::Real;
use crate::spd::{random_spd, random_symmetric};

use super::{PeriodicGrid, RrfsError, RrfsState};

#[derive(Clone, Debug, PartialEq)]
pub struct RandomFieldSpec<T> {
    pub n_base: usize,
    pub fiber_dim: usize,
    pub size: usize,
    pub period: T,
    pub seed: u64,
    /// Highest wavenumber per axis.
    pub modes: usize,
    /// Amplitude of the fiber-metric perturbation `S(x)` in `G = L exp(S) Lᵀ`.
    pub amplitude: T,
    /// Amplitude of the base-metric perturbation; zero keeps `g` flat.
    pub metric_amplitude: T,
    /// Amplitude of the connection; zero keeps `A = 0`.
    pub connection_amplitude: T,
}

impl<T: Real> RandomFieldSpec<T> {
    pub fn new(n_base: usize, fiber_dim: usize, size: usize, seed: u64) -> Self {
        Self {
            n_base,
            fiber_dim,
            size,
            period: T::TAU(),
            seed,
            modes: 2,
            amplitude: T::lit(0.4),
            metric_amplitude: T::lit(0.15),
            connection_amplitude: T::lit(0.3),
        }
    }
}

fn wavevectors(n_base: usize, modes: usize) -> Vec<[i64; 2]> {
    let m = modes as i64;
    let mut out = Vec::new();
    if n_base == 1 {
        for k in 1..=m {
            out.push([k, 0]);
        }
    } else {
        for kx in 0..=m {
            for ky in -m..=m {
                if kx > 0 || ky > 0 {
                    out.push([kx, ky]);
                }
            }
        }
    }
    out
}

struct Mode<T> {
    k: [i64; 2],
    cos: Mat<T>,
    sin: Mat<T>,
}

fn symmetric_modes<T: Real>(
    rng: &mut ChaCha8Rng,
    ks: &[[i64; 2]],
    dim: usize,
    amp: T,
) -> Vec<Mode<T>> {
    ks.iter()
        .map(|&k| {
            let k2 = T::from_usize_lossy((k[0] * k[0] + k[1] * k[1]) as usize);
            let a = amp / k2;
            Mode {
                k,
                cos: random_symmetric(rng, dim, a),
                sin: random_symmetric(rng, dim, a),
            }
        })
        .collect()
}

fn general_modes<T: Real>(
    rng: &mut ChaCha8Rng,
    ks: &[[i64; 2]],
    rows: usize,
    cols: usize,
    amp: T,
) -> Vec<Mode<T>> {
    let mut draw = |a: T| Mat::from_fn(rows, cols, |_, _| T::lit(rng.gen_range(-1.0..1.0)) * a);
    ks.iter()
        .map(|&k| {
            let k2 = T::from_usize_lossy((k[0] * k[0] + k[1] * k[1]) as usize);
            let a = amp / k2;
            Mode {
                k,
                cos: draw(a),
                sin: draw(a),
            }
        })
        .collect()
}

fn evaluate<T: Real>(modes: &[Mode<T>], x: [T; 2], period: T, rows: usize, cols: usize) -> Mat<T> {
    let w = T::TAU() / period;
    let mut out = Mat::zeros(rows, cols);
    for m in modes {
        let phase = w * (T::lit(m.k[0] as f64) * x[0] + T::lit(m.k[1] as f64) * x[1]);
        out.axpy(phase.cos(), &m.cos);
        out.axpy(phase.sin(), &m.sin);
    }
    out
}

/// Smooth random state: `G = L exp(S(x)) Lᵀ` with `L Lᵀ` a seeded random SPD
/// matrix, `g = exp(S_g(x))`, and a trigonometric connection. Mode amplitudes
/// fall off like `1/|k|²`.
pub fn random_smooth_state<T: Real>(spec: &RandomFieldSpec<T>) -> Result<RrfsState<T>, RrfsError> {
    let n = spec.n_base;
    let nf = spec.fiber_dim;
    let grid = PeriodicGrid::uniform(n, spec.size, spec.period)?;
    let base = random_spd(spec.seed, nf, T::lit(4.0))
        .map_err(|e| RrfsError::InvalidParameter(e.to_string()))?;
    let l = base
        .as_mat()
        .cholesky()
        .ok_or_else(|| RrfsError::InvalidParameter("seed matrix is not SPD".into()))?
        .lower()
        .clone();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let ks = wavevectors(n, spec.modes.max(1));
    let fib_modes = symmetric_modes(&mut rng, &ks, nf, spec.amplitude);
    let g_modes = symmetric_modes(&mut rng, &ks, n, spec.metric_amplitude);
    let a_modes = general_modes(&mut rng, &ks, n, nf, spec.connection_amplitude);
    let lt = l.transpose();
    let len = grid.len();
    let mut g = Vec::with_capacity(len);
    let mut a = Vec::with_capacity(len);
    let mut fiber = Vec::with_capacity(len);
    for k in 0..len {
        let x = grid.coords(k);
        let s = evaluate(&fib_modes, x, spec.period, nf, nf);
        fiber.push(l.matmul(&sym_exp(&s)).matmul(&lt).symmetrized());
        g.push(sym_exp(&evaluate(&g_modes, x, spec.period, n, n)).symmetrized());
        a.push(evaluate(&a_modes, x, spec.period, n, nf));
    }
    RrfsState::new(grid, nf, g, a, fiber)
}

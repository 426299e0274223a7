//! Geometric operators on a discrete state: Christoffel symbols, curvature,
//! connection curvature, Laplacian and tension of the fiber metric, energy
//! and the volume-normalising rescaling.

use crate::linalg::{Cholesky, Mat};
use crate::scalar::Real;
use crate::spd::christoffel_with_inverse;

use super::grid::{d2_central, d_central};
use super::{RrfsError, RrfsState};

/// `Γ^γ_{αβ}` per node, flattened as `γ n² + α n + β`.
#[derive(Clone, Debug, PartialEq)]
pub struct Christoffels<T> {
    n: usize,
    data: Vec<Vec<T>>,
}

impl<T: Real> Christoffels<T> {
    pub fn get(&self, node: usize, upper: usize, a: usize, b: usize) -> T {
        self.data[node][upper * self.n * self.n + a * self.n + b]
    }

    pub fn n_base(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// One component as a scalar field.
    pub fn component(&self, upper: usize, a: usize, b: usize) -> Vec<T> {
        let idx = upper * self.n * self.n + a * self.n + b;
        self.data.iter().map(|d| d[idx]).collect()
    }
}

/// `(dA)^i_{αβ}` per node: one antisymmetric n×n matrix for each fiber index `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConnectionCurvature<T> {
    /// `f[node][i][(α, β)]`
    pub f: Vec<Vec<Mat<T>>>,
}

/// Target Christoffel operation `(G⁻¹, X, Y) ↦ Γ_G(X, Y)`.
pub type ChristoffelFn<T> = dyn Fn(&Mat<T>, &Mat<T>, &Mat<T>) -> Mat<T>;

/// Per-evaluation cache shared by the operators.
pub(super) struct Geometry<T> {
    pub n: usize,
    pub nf: usize,
    pub ginv: Vec<Mat<T>>,
    pub sqrt_det: Vec<T>,
    pub gamma: Christoffels<T>,
    pub fib_inv: Vec<Mat<T>>,
    /// `∂_α G`, indexed `[α][node]`
    pub dfib: Vec<Vec<Mat<T>>>,
    pub curv: ConnectionCurvature<T>,
}

fn inverse_field<T: Real>(
    field: &[Mat<T>],
    name: &'static str,
) -> Result<(Vec<Mat<T>>, Vec<T>), RrfsError> {
    let mut inv = Vec::with_capacity(field.len());
    let mut det = Vec::with_capacity(field.len());
    for (k, m) in field.iter().enumerate() {
        let ch = Cholesky::new(m).ok_or(RrfsError::NotSpd {
            field: name,
            node: k,
        })?;
        inv.push(ch.inverse());
        det.push(ch.det());
    }
    Ok((inv, det))
}

impl<T: Real> Geometry<T> {
    pub fn new(state: &RrfsState<T>) -> Result<Self, RrfsError> {
        let grid = state.grid();
        let n = state.n_base();
        let (ginv, det) = inverse_field(&state.g, "g")?;
        let (fib_inv, _) = inverse_field(&state.fiber, "G")?;
        let gamma = christoffels_from(state, &ginv)?;
        let dfib = (0..n)
            .map(|ax| d_central(&state.fiber, ax, grid))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            n,
            nf: state.fiber_dim(),
            ginv,
            sqrt_det: det.into_iter().map(|d| d.sqrt()).collect(),
            gamma,
            fib_inv,
            dfib,
            curv: da_field(state)?,
        })
    }

    /// `g^{αβ} tr(G⁻¹∂_αG G⁻¹∂_βG)` at a node.
    pub fn grad_fiber_sq(&self, k: usize) -> T {
        let p: Vec<Mat<T>> = (0..self.n)
            .map(|a| self.fib_inv[k].matmul(&self.dfib[a][k]))
            .collect();
        let mut s = T::zero();
        for a in 0..self.n {
            for b in 0..self.n {
                s += self.ginv[k][(a, b)] * p[a].trace_of_product(&p[b]);
            }
        }
        s
    }

    /// `g^{αγ} g^{βδ} G_ij F^i_{αβ} F^j_{γδ}` at a node.
    pub fn curvature_sq(&self, k: usize, fiber: &Mat<T>) -> T {
        if self.n < 2 {
            return T::zero();
        }
        let gi = &self.ginv[k];
        let f = &self.curv.f[k];
        // raised[j] = g⁻¹ F^j g⁻¹ (F antisymmetric, g⁻¹ symmetric)
        let raised: Vec<Mat<T>> = f.iter().map(|fj| gi.matmul(fj).matmul(gi)).collect();
        let mut s = T::zero();
        for i in 0..self.nf {
            for j in 0..self.nf {
                s += fiber[(i, j)] * f[i].dot(&raised[j]);
            }
        }
        s
    }
}

fn christoffels_from<T: Real>(
    state: &RrfsState<T>,
    ginv: &[Mat<T>],
) -> Result<Christoffels<T>, RrfsError> {
    let grid = state.grid();
    let n = state.n_base();
    let dg = (0..n)
        .map(|ax| d_central(&state.g, ax, grid))
        .collect::<Result<Vec<_>, _>>()?;
    let half = T::lit(0.5);
    let data = (0..state.len())
        .map(|k| {
            let mut out = vec![T::zero(); n * n * n];
            for c in 0..n {
                for a in 0..n {
                    for b in 0..n {
                        let mut s = T::zero();
                        for d in 0..n {
                            let lower = dg[a][k][(b, d)] + dg[b][k][(a, d)] - dg[d][k][(a, b)];
                            s += ginv[k][(c, d)] * lower;
                        }
                        out[c * n * n + a * n + b] = half * s;
                    }
                }
            }
            out
        })
        .collect();
    Ok(Christoffels { n, data })
}

/// `Γ^γ_{αβ} = ½ g^{γδ}(∂_α g_{βδ} + ∂_β g_{αδ} - ∂_δ g_{αβ})`.
pub fn christoffels_of_g<T: Real>(state: &RrfsState<T>) -> Result<Christoffels<T>, RrfsError> {
    let (ginv, _) = inverse_field(&state.g, "g")?;
    christoffels_from(state, &ginv)
}

/// `(dA)^i_{αβ} = ∂_α A^i_β - ∂_β A^i_α`; identically zero for `n = 1`.
pub fn da_field<T: Real>(state: &RrfsState<T>) -> Result<ConnectionCurvature<T>, RrfsError> {
    let n = state.n_base();
    let nf = state.fiber_dim();
    if n < 2 {
        return Ok(ConnectionCurvature {
            f: vec![vec![Mat::zeros(n, n); nf]; state.len()],
        });
    }
    let da = (0..n)
        .map(|ax| d_central(&state.a, ax, state.grid()))
        .collect::<Result<Vec<_>, _>>()?;
    let f = (0..state.len())
        .map(|k| {
            (0..nf)
                .map(|i| {
                    let mut m = Mat::zeros(n, n);
                    for a in 0..n {
                        for b in (a + 1)..n {
                            let v = da[a][k][(b, i)] - da[b][k][(a, i)];
                            m[(a, b)] = v;
                            m[(b, a)] = -v;
                        }
                    }
                    m
                })
                .collect()
        })
        .collect();
    Ok(ConnectionCurvature { f })
}

pub(super) fn delta_da_with<T: Real>(
    state: &RrfsState<T>,
    geo: &Geometry<T>,
) -> Result<Vec<Mat<T>>, RrfsError> {
    let n = geo.n;
    let nf = geo.nf;
    let len = state.len();
    if n < 2 {
        return Ok(vec![Mat::zeros(n, nf); len]);
    }
    // ∂_γ F^i, indexed [i][γ][node]
    let df: Vec<Vec<Vec<Mat<T>>>> = (0..nf)
        .map(|i| {
            let fi: Vec<Mat<T>> = geo.curv.f.iter().map(|fk| fk[i].clone()).collect();
            (0..n)
                .map(|c| d_central(&fi, c, state.grid()))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let out = (0..len)
        .map(|k| {
            let gi = &geo.ginv[k];
            let f = &geo.curv.f[k];
            let mut m = Mat::zeros(n, nf);
            for i in 0..nf {
                for al in 0..n {
                    let mut s = T::zero();
                    for be in 0..n {
                        for ga in 0..n {
                            let mut cov = df[i][ga][k][(be, al)];
                            for de in 0..n {
                                cov -= geo.gamma.get(k, de, ga, be) * f[i][(de, al)];
                                cov -= geo.gamma.get(k, de, ga, al) * f[i][(be, de)];
                            }
                            s += gi[(be, ga)] * cov;
                        }
                    }
                    m[(al, i)] = -s;
                }
            }
            m
        })
        .collect();
    Ok(out)
}

/// `(δdA)^i_α = -g^{βγ} ∇_γ (dA)^i_{βα}` with the Levi-Civita connection of `g`.
pub fn delta_da<T: Real>(state: &RrfsState<T>) -> Result<Vec<Mat<T>>, RrfsError> {
    let geo = Geometry::new(state)?;
    delta_da_with(state, &geo)
}

pub(super) fn laplacian_with<T: Real>(
    state: &RrfsState<T>,
    geo: &Geometry<T>,
) -> Result<Vec<Mat<T>>, RrfsError> {
    let n = geo.n;
    let grid = state.grid();
    let mut d2 = Vec::with_capacity(n * n);
    for a in 0..n {
        for b in 0..n {
            d2.push(if b < a {
                None
            } else {
                Some(d2_central(&state.fiber, a, b, grid)?)
            });
        }
    }
    let out = (0..state.len())
        .map(|k| {
            let mut m = Mat::zeros(geo.nf, geo.nf);
            for a in 0..n {
                for b in 0..n {
                    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                    let mut h = d2[lo * n + hi].as_ref().unwrap()[k].clone();
                    for c in 0..n {
                        h.axpy(-geo.gamma.get(k, c, a, b), &geo.dfib[c][k]);
                    }
                    m.axpy(geo.ginv[k][(a, b)], &h);
                }
            }
            m
        })
        .collect();
    Ok(out)
}

/// `ΔG = g^{αβ}(∂_α∂_β G - Γ^γ_{αβ} ∂_γ G)`, entrywise.
pub fn laplacian_g<T: Real>(state: &RrfsState<T>) -> Result<Vec<Mat<T>>, RrfsError> {
    let geo = Geometry::new(state)?;
    laplacian_with(state, &geo)
}

/// `g^{αβ} ∂_αG G⁻¹ ∂_βG` at every node.
pub(super) fn fiber_quadratic<T: Real>(geo: &Geometry<T>, k: usize) -> Mat<T> {
    let mut m = Mat::zeros(geo.nf, geo.nf);
    for a in 0..geo.n {
        let left = geo.dfib[a][k].matmul(&geo.fib_inv[k]);
        for b in 0..geo.n {
            m.axpy(geo.ginv[k][(a, b)], &left.matmul(&geo.dfib[b][k]));
        }
    }
    m
}

/// `ΔG - g^{αβ} ∂_αG G⁻¹ ∂_βG`.
pub fn tension_g_simplified<T: Real>(state: &RrfsState<T>) -> Result<Vec<Mat<T>>, RrfsError> {
    let geo = Geometry::new(state)?;
    let lap = laplacian_with(state, &geo)?;
    Ok(lap
        .into_iter()
        .enumerate()
        .map(|(k, l)| &l - &fiber_quadratic(&geo, k))
        .collect())
}

/// `g^{αβ}(∂_α∂_βG - Γ^γ_{αβ}∂_γG + Γ_S(∂_αG, ∂_βG))`, with the target
/// Christoffel operation supplied as `gamma_s(G⁻¹, X, Y)`.
pub fn tension_g_general_with<T: Real>(
    state: &RrfsState<T>,
    gamma_s: &ChristoffelFn<T>,
) -> Result<Vec<Mat<T>>, RrfsError> {
    let geo = Geometry::new(state)?;
    let lap = laplacian_with(state, &geo)?;
    Ok(lap
        .into_iter()
        .enumerate()
        .map(|(k, mut m)| {
            for a in 0..geo.n {
                for b in 0..geo.n {
                    let c = gamma_s(&geo.fib_inv[k], &geo.dfib[a][k], &geo.dfib[b][k]);
                    m.axpy(geo.ginv[k][(a, b)], &c);
                }
            }
            m
        })
        .collect())
}

/// Tension of `G` as a map into the SPD cone with its affine-invariant metric.
pub fn tension_g_general<T: Real>(state: &RrfsState<T>) -> Result<Vec<Mat<T>>, RrfsError> {
    tension_g_general_with(state, &christoffel_with_inverse)
}

/// `½ Σ g^{αβ} tr(G⁻¹∂_αG G⁻¹∂_βG) √det g ∏h`.
pub fn energy_g<T: Real>(state: &RrfsState<T>) -> Result<T, RrfsError> {
    let geo = Geometry::new(state)?;
    let cell = state.grid().cell_volume();
    let sum: T = (0..state.len())
        .map(|k| geo.grad_fiber_sq(k) * geo.sqrt_det[k])
        .sum();
    Ok(T::lit(0.5) * sum * cell)
}

pub(super) fn ricci_with<T: Real>(
    state: &RrfsState<T>,
    geo: &Geometry<T>,
) -> Result<Vec<Mat<T>>, RrfsError> {
    let n = geo.n;
    let len = state.len();
    if n < 2 {
        return Ok(vec![Mat::zeros(n, n); len]);
    }
    let grid = state.grid();
    // dgam[axis][comp][node]
    let comps: Vec<Vec<T>> = (0..n * n * n)
        .map(|idx| geo.gamma.component(idx / (n * n), (idx / n) % n, idx % n))
        .collect();
    let dgam: Vec<Vec<Vec<T>>> = (0..n)
        .map(|ax| {
            comps
                .iter()
                .map(|c| d_central(c, ax, grid))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let at = |c: usize, a: usize, b: usize| c * n * n + a * n + b;
    let out = (0..len)
        .map(|k| {
            let gm = |c, a, b| geo.gamma.get(k, c, a, b);
            let mut r = Mat::zeros(n, n);
            for a in 0..n {
                for b in 0..n {
                    let mut s = T::zero();
                    for c in 0..n {
                        s += dgam[c][at(c, a, b)][k];
                        s -= dgam[b][at(c, c, a)][k];
                        for d in 0..n {
                            s += gm(c, c, d) * gm(d, a, b);
                            s -= gm(c, b, d) * gm(d, a, c);
                        }
                    }
                    r[(a, b)] = s;
                }
            }
            r.symmetrized()
        })
        .collect();
    Ok(out)
}

/// `R_{αβ} = ∂_γΓ^γ_{αβ} - ∂_βΓ^γ_{γα} + Γ^γ_{γδ}Γ^δ_{αβ} - Γ^γ_{βδ}Γ^δ_{αγ}`;
/// zero for `n = 1`.
pub fn ricci_tensor<T: Real>(state: &RrfsState<T>) -> Result<Vec<Mat<T>>, RrfsError> {
    let geo = Geometry::new(state)?;
    ricci_with(state, &geo)
}

pub(super) fn scalar_with<T: Real>(geo: &Geometry<T>, ricci: &[Mat<T>]) -> Vec<T> {
    ricci
        .iter()
        .zip(&geo.ginv)
        .map(|(r, gi)| gi.trace_of_product(r))
        .collect()
}

pub fn scalar_curvature<T: Real>(state: &RrfsState<T>) -> Result<Vec<T>, RrfsError> {
    let geo = Geometry::new(state)?;
    let ric = ricci_with(state, &geo)?;
    Ok(scalar_with(&geo, &ric))
}

pub(super) fn r_density_with<T: Real>(
    state: &RrfsState<T>,
    geo: &Geometry<T>,
    ricci: &[Mat<T>],
) -> Vec<T> {
    let quarter = T::lit(0.25);
    let half = T::lit(0.5);
    scalar_with(geo, ricci)
        .into_iter()
        .enumerate()
        .map(|(k, r)| {
            r - quarter * geo.grad_fiber_sq(k) - half * geo.curvature_sq(k, &state.fiber[k])
        })
        .collect()
}

/// `r = R - ¼|∇G|² - ½|dA|²` at every node.
pub fn r_density<T: Real>(state: &RrfsState<T>) -> Result<Vec<T>, RrfsError> {
    let geo = Geometry::new(state)?;
    let ric = ricci_with(state, &geo)?;
    Ok(r_density_with(state, &geo, &ric))
}

pub(super) fn s_volume_with<T: Real>(
    state: &RrfsState<T>,
    geo: &Geometry<T>,
    ricci: &[Mat<T>],
) -> T {
    let r = r_density_with(state, geo, ricci);
    let num: T = r.iter().zip(&geo.sqrt_det).map(|(&r, &w)| r * w).sum();
    let den: T = geo.sqrt_det.iter().copied().sum();
    -(T::lit(2.0) / T::from_usize_lossy(geo.n)) * num / den
}

/// `s = -(2/n) ⨍ r dμ`, the rescaling that keeps the base volume fixed.
pub fn s_volume<T: Real>(state: &RrfsState<T>) -> Result<T, RrfsError> {
    let geo = Geometry::new(state)?;
    let ric = ricci_with(state, &geo)?;
    Ok(s_volume_with(state, &geo, &ric))
}

/// `Σ √det g ∏h`.
pub fn volume<T: Real>(state: &RrfsState<T>) -> Result<T, RrfsError> {
    let (_, det) = inverse_field(&state.g, "g")?;
    let sum: T = det.into_iter().map(|d| d.sqrt()).sum();
    Ok(sum * state.grid().cell_volume())
}

//! Finite-volume correlators: Monte Carlo estimates of the eigenfunction
//! overlap sum, exponential decay fits, the operator-norm decay rate and the
//! fixed-energy integral bound.

use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ksop::{self, assemble_plus, boundary_vector_t1, boundary_vectors, norm_2_to_2, CellProblem};
use crate::model::{derive_seed, sample_couplings, ModelSpec};
use crate::quad::{self, mapped_rule, pairwise_sum};
use crate::roots;
use crate::spectral::{find_eigenvalues_in_window, EigenPair};

const EIGEN_TOL: f64 = 1e-10;
const BATCHES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelatorSeries {
    pub distances: Vec<i64>,
    pub means: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub sample_count: usize,
    pub l: usize,
    pub e_max: f64,
    pub seed: u64,
    /// Average number of eigenvalues in `[-E_max, E_max]` per draw.
    pub mean_window_count: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub c: f64,
    pub eta: f64,
    pub eta_std_error: f64,
    pub r_squared: f64,
    pub fit_window: Vec<i64>,
    /// Distances in the window left out for a non-positive mean.
    pub dropped: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorBoundRate {
    pub gamma: f64,
    /// `ln(1/γ)`, absent when `γ ∉ (0, 1)`.
    pub eta_op: Option<f64>,
    pub flagged: bool,
    pub grid_descriptor: String,
    /// `(cell, E, ‖T₁(g_cell, E)‖₂,₂)` for every grid point.
    pub norms: Vec<(i64, f64, f64)>,
}

/// `‖χ_x v‖` with `χ_x` the indicator of `[x-1, x]`, by Simpson's rule on
/// the stored grid.
pub fn local_norm(pair: &EigenPair, x: i64) -> f64 {
    let (a, b) = ((x - 1) as f64, x as f64);
    let g = &pair.grid;
    if g.len() < 3 || b <= g[0] || a >= g[g.len() - 1] {
        return 0.0;
    }
    let i0 = g.partition_point(|&t| t < a - 1e-12);
    let i1 = g.partition_point(|&t| t <= b + 1e-12);
    if i1 <= i0 + 1 {
        return 0.0;
    }
    let sq: Vec<f64> = pair.eigenfunction[i0..i1].iter().map(|v| v * v).collect();
    let h = g[i0 + 1] - g[i0];
    if sq.len() % 2 == 1 {
        quad::simpson(&sq, h).max(0.0).sqrt()
    } else {
        let trap: f64 = sq.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).sum();
        trap.max(0.0).sqrt()
    }
}

/// `Σ_k ‖χ_x v_k‖ ‖χ_y v_k‖` over the given eigenpairs.
pub fn correlator_summand(pairs: &[EigenPair], x: i64, y: i64, _l: usize) -> f64 {
    pairs.iter().map(|p| local_norm(p, x) * local_norm(p, y)).sum()
}

/// Eigenpairs in the window for one disorder draw.
pub fn draw_eigenpairs(spec: &ModelSpec, l: usize, seed: u64, sample: u64) -> Result<(Vec<f64>, Vec<EigenPair>)> {
    let omega = sample_couplings(&spec.coupling, 2 * l, derive_seed(seed, sample))?;
    let pairs = find_eigenvalues_in_window(spec, &omega, l, EIGEN_TOL)?;
    Ok((omega, pairs))
}

/// Mean and batch-means standard error of per-sample values.
pub fn batch_statistics(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = pairwise_sum(values) / n as f64;
    let b = BATCHES.min(n);
    if b < 2 {
        return (mean, 0.0);
    }
    let batch_means: Vec<f64> = (0..b)
        .map(|k| {
            let (lo, hi) = (k * n / b, (k + 1) * n / b);
            pairwise_sum(&values[lo..hi]) / (hi - lo) as f64
        })
        .collect();
    let dev: Vec<f64> = batch_means.iter().map(|m| (m - mean).powi(2)).collect();
    let var = pairwise_sum(&dev) / (b * (b - 1)) as f64;
    (mean, var.sqrt())
}

/// Monte Carlo estimate of `ρ_L(1, n)` for every `n` in `distances`, using
/// one set of draws for all distances.
pub fn correlator_series(spec: &ModelSpec, l: usize, distances: &[i64], samples: usize, seed: u64) -> Result<CorrelatorSeries> {
    if samples < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 samples, got {samples}")));
    }
    if l == 0 {
        return Err(Error::InvalidInput("box half-width must be positive".into()));
    }
    if let Some(&n) = distances.iter().find(|&&n| n < 1 || n > l as i64) {
        return Err(Error::InvalidInput(format!("distance {n} outside 1..={l}")));
    }
    let rows: Vec<(Vec<f64>, f64)> = (0..samples as u64)
        .into_par_iter()
        .map(|s| {
            let (_, pairs) = draw_eigenpairs(spec, l, seed, s)?;
            let v = distances.iter().map(|&n| correlator_summand(&pairs, 1, n, l)).collect();
            Ok((v, pairs.len() as f64))
        })
        .collect::<Result<_>>()?;
    let mut means = Vec::new();
    let mut std_errors = Vec::new();
    for d in 0..distances.len() {
        let col: Vec<f64> = rows.iter().map(|r| r.0[d]).collect();
        let (m, se) = batch_statistics(&col);
        means.push(m);
        std_errors.push(se);
    }
    let counts: Vec<f64> = rows.iter().map(|r| r.1).collect();
    Ok(CorrelatorSeries {
        distances: distances.to_vec(),
        means,
        std_errors,
        sample_count: samples,
        l,
        e_max: spec.e_max,
        seed,
        mean_window_count: pairwise_sum(&counts) / samples as f64,
    })
}

/// Monte Carlo estimate of `ρ_L(x, y)` with its standard error.
pub fn estimate_rho(spec: &ModelSpec, l: usize, x: i64, y: i64, samples: usize, seed: u64) -> Result<(f64, f64)> {
    if samples < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 samples, got {samples}")));
    }
    let lo = 1 - l as i64;
    if x < lo || y < lo || x > l as i64 || y > l as i64 {
        return Err(Error::InvalidInput(format!("sites ({x}, {y}) outside the box ({lo}..={l})")));
    }
    let values: Vec<f64> = (0..samples as u64)
        .into_par_iter()
        .map(|s| Ok(correlator_summand(&draw_eigenpairs(spec, l, seed, s)?.1, x, y, l)))
        .collect::<Result<_>>()?;
    Ok(batch_statistics(&values))
}

/// Weighted least squares of `ln mean` against `n` over `n ≥ min_distance`.
pub fn decay_fit(series: &CorrelatorSeries, min_distance: i64) -> Result<DecayFit> {
    let mut pts = Vec::new();
    let mut dropped = Vec::new();
    for (i, &n) in series.distances.iter().enumerate() {
        if n < min_distance {
            continue;
        }
        let m = series.means[i];
        if m > 0.0 && m.is_finite() {
            let se = series.std_errors.get(i).copied().unwrap_or(0.0);
            pts.push((n as f64, m.ln(), se / m));
        } else {
            dropped.push(n);
        }
    }
    if pts.len() < 3 {
        return Err(Error::InvalidInput(format!("need 3 positive means at n >= {min_distance}, have {}", pts.len())));
    }
    let weighted = pts.iter().all(|p| p.2 > 0.0);
    let w: Vec<f64> = pts.iter().map(|p| if weighted { 1.0 / (p.2 * p.2) } else { 1.0 }).collect();
    let sw: f64 = w.iter().sum();
    let xm = pts.iter().zip(&w).map(|(p, w)| w * p.0).sum::<f64>() / sw;
    let ym = pts.iter().zip(&w).map(|(p, w)| w * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().zip(&w).map(|(p, w)| w * (p.0 - xm).powi(2)).sum();
    let sxy: f64 = pts.iter().zip(&w).map(|(p, w)| w * (p.0 - xm) * (p.1 - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let ss_res: f64 = pts.iter().zip(&w).map(|(p, w)| w * (p.1 - intercept - slope * p.0).powi(2)).sum();
    let ss_tot: f64 = pts.iter().zip(&w).map(|(p, w)| w * (p.1 - ym).powi(2)).sum();
    let r_squared = if ss_tot > 1e-300 { 1.0 - ss_res / ss_tot } else { 1.0 };
    let dof = (pts.len() - 2) as f64;
    let slope_var = if weighted { (ss_res / dof).max(1.0) / sxx } else { ss_res / dof / sxx };
    Ok(DecayFit {
        c: intercept.exp(),
        eta: -slope,
        eta_std_error: slope_var.sqrt(),
        r_squared,
        fit_window: pts.iter().map(|p| p.0 as i64).collect(),
        dropped,
    })
}

/// `γ = max ‖T₁(g_i, E)‖₂,₂` over the grid, evaluated as `‖T₁(g_i - E, 0)‖`.
pub fn operator_bound_rate(spec: &ModelSpec, cell_indices: &[i64], e_grid: &[f64], m: usize) -> Result<OperatorBoundRate> {
    if cell_indices.is_empty() || e_grid.is_empty() {
        return Err(Error::InvalidInput("need at least one cell and one energy".into()));
    }
    if let Some(e) = e_grid.iter().find(|e| e.abs() > spec.e_max) {
        return Err(Error::InvalidInput(format!("energy {e} outside [-E_max, E_max]")));
    }
    let mut seen: Vec<(String, f64)> = Vec::new();
    let mut norms = Vec::new();
    for &i in cell_indices {
        for &e in e_grid {
            let p = CellProblem::for_cell(spec, i, e).energy_absorbed();
            let key = serde_json::to_string(&p.g)?;
            let norm = match seen.iter().find(|s| s.0 == key) {
                Some(s) => s.1,
                None => {
                    let v = norm_2_to_2(&assemble_plus(&p, m)?.t1);
                    seen.push((key, v));
                    v
                }
            };
            norms.push((i, e, norm));
        }
    }
    let gamma = norms.iter().map(|n| n.2).fold(0.0, f64::max);
    let ok = gamma > 0.0 && gamma < 1.0;
    Ok(OperatorBoundRate {
        gamma,
        eta_op: ok.then(|| (1.0 / gamma).ln()),
        flagged: !ok,
        grid_descriptor: format!("cells={cell_indices:?}; E={e_grid:?}; m={m}"),
        norms,
    })
}

/// `‖χ_x e^{-itH} P χ_y‖` for the spectral projection `P` onto the given
/// eigenpairs.
pub fn dynamical_moment(pairs: &[EigenPair], x: i64, y: i64, t: f64, _l: usize) -> f64 {
    let k = pairs.len();
    if k == 0 {
        return 0.0;
    }
    let sx = gram_sqrt(pairs, x);
    let sy = gram_sqrt(pairs, y);
    let d = DMatrix::from_fn(k, k, |i, j| if i == j { Complex::from_polar(1.0, -t * pairs[i].energy) } else { Complex::new(0.0, 0.0) });
    let a = sx.map(|v| Complex::new(v, 0.0)) * d * sy.map(|v| Complex::new(v, 0.0));
    a.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Square root of the Gram matrix `∫_{x-1}^x v_i v_j`.
fn gram_sqrt(pairs: &[EigenPair], x: i64) -> DMatrix<f64> {
    let k = pairs.len();
    let (a, b) = ((x - 1) as f64, x as f64);
    let g = &pairs[0].grid;
    let i0 = g.partition_point(|&t| t < a - 1e-12);
    let i1 = g.partition_point(|&t| t <= b + 1e-12);
    let gram = DMatrix::from_fn(k, k, |i, j| {
        if i1 <= i0 + 2 {
            return 0.0;
        }
        let prod: Vec<f64> = (i0..i1).map(|s| pairs[i].eigenfunction[s] * pairs[j].eigenfunction[s]).collect();
        let h = g[i0 + 1] - g[i0];
        if prod.len() % 2 == 1 {
            quad::simpson(&prod, h)
        } else {
            prod.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).sum()
        }
    });
    let eig = SymmetricEigen::new(gram);
    let s = DVector::from_iterator(k, eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * DMatrix::from_diagonal(&s) * eig.eigenvectors.transpose()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub l: usize,
    pub n: usize,
    pub energy: f64,
    /// `ρ_L(1, n, E)` by quadrature over the couplings.
    pub lhs: f64,
    /// `C Σ_j ⟨…⟩` from the discretized operators.
    pub rhs: f64,
    /// The a priori constant `C = exp(1 + ‖W₀‖ + |E| + M‖f‖)`.
    pub constant: f64,
    /// `⟨…⟩` for each `j`, without `C`.
    pub inner_products: Vec<f64>,
    pub m: usize,
    pub nodes: usize,
}

impl BoundCheck {
    pub fn holds(&self, slack: f64) -> bool {
        self.lhs <= self.rhs * (1.0 + slack)
    }
}

/// The a priori constant bounding `∫_{i-1}^i u² / R²(i)`.
pub fn a_priori_constant(spec: &ModelSpec, e: f64) -> f64 {
    (1.0 + spec.background.sup_norm + e.abs() + spec.coupling.support_bound * spec.single_site.sup_norm).exp()
}

/// Right side: `C Σ_j ⟨T̃₀⋯T̃₀ Φ, T₁⋯T₁ T₀⋯T₀ Ψ_j⟩` on an `m`-point grid.
pub fn bound_rhs(spec: &ModelSpec, l: usize, n: usize, e: f64, m: usize) -> Result<(f64, Vec<f64>)> {
    bound_rhs_cached(spec, l, n, e, m, &ksop::KernelCache::new())
}

/// [`bound_rhs`] drawing kernels from `cache`, so several `n` at the same
/// `(L, E, m)` share one assembly.
pub fn bound_rhs_cached(spec: &ModelSpec, l: usize, n: usize, e: f64, m: usize, cache: &ksop::KernelCache) -> Result<(f64, Vec<f64>)> {
    if l == 0 || n == 0 || n > l {
        return Err(Error::InvalidInput(format!("need 1 <= n <= L, got n = {n}, L = {l}")));
    }
    let li = l as i64;
    let cell = |i: i64| CellProblem::for_cell(spec, i, e);

    let first = cell(1 - li);
    let (_, phi) = boundary_vectors(&first, 0, m)?;
    let mut left = phi;
    for i in (2 - li)..=0 {
        let k = cache.kernel(&cell(i), ksop::KernelKind::T0Tilde, m)?;
        left = k.apply(&left);
    }

    let nn = 2 * spec.phase_bound_n;
    let mut inner = Vec::new();
    for j in 0..nn {
        let last = cell(li);
        let mut right = if n == l { boundary_vector_t1(&last, j, m)? } else { boundary_vectors(&last, j, m)?.0 };
        for i in (1..li).rev() {
            let kind = if i as usize <= n { ksop::KernelKind::T1 } else { ksop::KernelKind::T0 };
            right = cache.kernel(&cell(i), kind, m)?.apply(&right);
        }
        let h = first.period() / m as f64;
        inner.push(h * left.iter().zip(&right).map(|(a, b)| a * b).sum::<f64>());
    }
    Ok((a_priori_constant(spec, e) * inner.iter().sum::<f64>(), inner))
}

/// Left side: `ρ_L(1, n, E)` with the phase variables traded for the
/// couplings `ω_{-L+1}, …, ω_{L-1}`; the last coupling is fixed by the
/// boundary phase `jπ`.
pub fn bound_lhs(spec: &ModelSpec, l: usize, n: usize, e: f64, nodes: usize) -> Result<f64> {
    if l == 0 || n == 0 || n > l {
        return Err(Error::InvalidInput(format!("need 1 <= n <= L, got n = {n}, L = {l}")));
    }
    if l > 3 {
        return Err(Error::InvalidInput(format!("coupling quadrature is limited to L <= 3, got {l}")));
    }
    let li = l as i64;
    let last = CellProblem::for_cell(spec, li, e);
    let breaks = last.lambda_breaks();
    let period = last.period();
    let outer_dims = 2 * l - 2;
    let pieces: Vec<(f64, f64)> = breaks.windows(2).map(|w| (w[0], w[1])).collect();
    let rule: Vec<(f64, f64)> = pieces
        .iter()
        .flat_map(|&(a, b)| mapped_rule(a, b, nodes))
        .map(|(x, w)| (x, w * spec.coupling.pdf(x)))
        .collect();

    let mut total = 0.0;
    let mut idx = vec![0usize; outer_dims];
    loop {
        let mut omega = vec![0.0; 2 * l];
        let mut weight = 1.0;
        for (d, &k) in idx.iter().enumerate() {
            omega[d] = rule[k].0;
            weight *= rule[k].1;
        }
        if weight != 0.0 {
            total += weight * inner_lhs(spec, l, n, e, &mut omega, &last, &breaks, period, nodes)?;
        }
        let mut d = 0;
        while d < outer_dims {
            idx[d] += 1;
            if idx[d] < rule.len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == outer_dims {
            break;
        }
    }
    Ok(total)
}

/// Integral over `ω_{L-1}` with the outer couplings fixed in `omega`.
#[allow(clippy::too_many_arguments)]
fn inner_lhs(
    spec: &ModelSpec,
    l: usize,
    n: usize,
    e: f64,
    omega: &mut [f64],
    last: &CellProblem,
    breaks: &[f64],
    period: f64,
    nodes: usize,
) -> Result<f64> {
    let lf = l as f64;
    let slot = 2 * l - 2;
    let opts = crate::ode::OdeOptions::with_tol(1e-11);
    let theta = |w: f64, omega: &[f64]| -> Result<f64> {
        let mut om = omega.to_vec();
        om[slot] = w;
        let q = spec.full_potential(&om, 1 - l as i64);
        crate::prufer::phase_end(&q, e, -lf, lf - 1.0, 0.0, &opts)
    };
    let mut total = 0.0;
    let (w_lo, w_hi) = (breaks[0], breaks[breaks.len() - 1]);
    let (t_hi, t_lo) = (theta(w_lo, omega)?, theta(w_hi, omega)?);
    for j in 0..2 * spec.phase_bound_n {
        let alpha = j as f64 * PI;
        for lam in breaks.windows(2) {
            let b0 = last.phase_plus(alpha, lam[0])?;
            let b1 = last.phase_plus(alpha, lam[1])?;
            let k_lo = ((t_lo - b1) / period).floor() as i64;
            let k_hi = ((t_hi - b0) / period).ceil() as i64;
            for k in k_lo..=k_hi {
                let (c0, c1) = (b0 + k as f64 * period, b1 + k as f64 * period);
                let (x, y) = (c0.max(t_lo), c1.min(t_hi));
                if y <= x {
                    continue;
                }
                let end = |target: f64| -> Result<f64> {
                    if target >= t_hi {
                        Ok(w_lo)
                    } else if target <= t_lo {
                        Ok(w_hi)
                    } else {
                        roots::brent(|w| Ok(target - theta(w, omega)?), w_lo, w_hi, target - t_hi, target - t_lo, 1e-13, 200)
                    }
                };
                let (wa, wb) = (end(y)?, end(x)?);
                let mut cuts = vec![wa];
                cuts.extend(breaks.iter().copied().filter(|&b| b > wa && b < wb));
                cuts.push(wb);
                let rule: Vec<(f64, f64)> = cuts.windows(2).flat_map(|c| mapped_rule(c[0], c[1], nodes)).collect();
                for (wl, wt) in rule {
                    let r = spec.coupling.pdf(wl);
                    if r == 0.0 {
                        continue;
                    }
                    let th = theta(wl, omega)?;
                    let sol = last.lambda(th, alpha)?;
                    if !sol.exists {
                        continue;
                    }
                    let rl = spec.coupling.pdf(sol.lambda);
                    if rl == 0.0 {
                        continue;
                    }
                    omega[slot] = wl;
                    omega[slot + 1] = sol.lambda;
                    let cells = ksop::cell_masses(spec, omega, l, e, true)?;
                    let mass = |i: i64| cells.iter().find(|c| c.0 == i).map(|c| c.3).unwrap_or(0.0);
                    let f_last = cells.iter().find(|c| c.0 == l as i64).map(|c| c.2).unwrap_or(0.0);
                    total += wt * r * rl * (mass(n as i64) * mass(1)).sqrt() / f_last;
                }
            }
        }
    }
    Ok(total)
}

/// Both sides of the fixed-energy bound.
pub fn kunz_souillard_bound_check(spec: &ModelSpec, l: usize, n: usize, e: f64, m: usize, nodes: usize) -> Result<BoundCheck> {
    let lhs = bound_lhs(spec, l, n, e, nodes)?;
    let (rhs, inner_products) = bound_rhs(spec, l, n, e, m)?;
    Ok(BoundCheck { l, n, energy: e, lhs, rhs, constant: a_priori_constant(spec, e), inner_products, m, nodes })
}

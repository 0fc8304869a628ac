//! Dirichlet eigenvalues of `H_ω` on `[-L, L]` by Prüfer shooting, and a
//! finite-difference matrix oracle.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ModelSpec, Potential};
use crate::ode::{OdeOptions, Steps};
use crate::prufer::{self, phase_end};
use crate::quad;

pub const EIGENFUNCTION_SAMPLES_PER_CELL: usize = 512;
const BISECTION_CAP: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenPair {
    pub index_k: usize,
    pub energy: f64,
    pub grid: Vec<f64>,
    pub eigenfunction: Vec<f64>,
    /// `‖v_k‖²` of the stored samples by Simpson's rule.
    pub l2_norm_check: f64,
    /// Set when `E_k` lies within the bisection tolerance of `±E_max`.
    pub boundary_ambiguous: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseProfile {
    /// `φ_{-L}(i)` mod `2πN` for `i = -L+1, …, L-1`.
    pub theta_values: Vec<f64>,
    pub branch_index_j: usize,
}

fn check_omega(omega: &[f64], l: usize) -> Result<()> {
    if l == 0 {
        return Err(Error::InvalidInput("L must be at least 1".into()));
    }
    if omega.len() != 2 * l {
        return Err(Error::InvalidInput(format!("omega has length {}, expected 2L = {}", omega.len(), 2 * l)));
    }
    if let Some(w) = omega.iter().find(|w| !w.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite coupling {w}")));
    }
    Ok(())
}

fn first_cell(l: usize) -> i64 {
    1 - l as i64
}

/// Unwrapped `φ_{-L}(L, ω, E)` for `u(-L) = 0`, `u'(-L) = 1`.
pub fn phase_at_right_end(spec: &ModelSpec, omega: &[f64], l: usize, e: f64) -> Result<f64> {
    phase_at_right_end_tol(spec, omega, l, e, &OdeOptions::default())
}

pub fn phase_at_right_end_tol(spec: &ModelSpec, omega: &[f64], l: usize, e: f64, opts: &OdeOptions) -> Result<f64> {
    check_omega(omega, l)?;
    let q = spec.full_potential(omega, first_cell(l));
    let lf = l as f64;
    phase_end(&q, e, -lf, lf, 0.0, opts)
}

/// Number of Dirichlet eigenvalues `≤ E`.
pub fn count_eigenvalues_below(spec: &ModelSpec, omega: &[f64], l: usize, e: f64) -> Result<usize> {
    let phi = phase_at_right_end(spec, omega, l, e)?;
    Ok((phi / PI).floor().max(0.0) as usize)
}

fn bisect_index(spec: &ModelSpec, omega: &[f64], l: usize, k: usize, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let target = k as f64 * PI;
    let opts = OdeOptions::with_tol(tol.clamp(1e-13, 1e-10));
    for _ in 0..BISECTION_CAP {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if phase_at_right_end_tol(spec, omega, l, mid, &opts)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The `k`-th Dirichlet eigenvalue (1-based), located by bisection on the
/// right-end phase.
pub fn eigenvalue_by_index(spec: &ModelSpec, omega: &[f64], l: usize, k: usize, tol: f64) -> Result<f64> {
    check_omega(omega, l)?;
    if k == 0 {
        return Err(Error::InvalidInput("eigenvalue index starts at 1".into()));
    }
    let wmax = omega.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let lo = -(spec.background.sup_norm + wmax * spec.single_site.sup_norm) - 1.0;
    let mut hi = lo.abs() + 1.0;
    while count_eigenvalues_below(spec, omega, l, hi)? < k {
        hi = 2.0 * hi + 1.0;
        if hi > 1e12 {
            return Err(Error::NotFound);
        }
    }
    let tol = if tol > 0.0 { tol } else { 1e-12 };
    let target = k as f64 * PI;
    let opts = OdeOptions::with_tol(tol.clamp(1e-13, 1e-10));
    let (mut a, mut b) = (lo, hi);
    while b - a > tol {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if phase_at_right_end_tol(spec, omega, l, mid, &opts)? < target {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

/// Every Dirichlet eigenvalue in `[-E_max, E_max]` with its normalized
/// eigenfunction, sorted by index.
pub fn find_eigenvalues_in_window(spec: &ModelSpec, omega: &[f64], l: usize, tol: f64) -> Result<Vec<EigenPair>> {
    check_omega(omega, l)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }
    let (lo, hi) = (-spec.e_max - tol, spec.e_max + tol);
    let k_lo = count_eigenvalues_below(spec, omega, l, lo)? + 1;
    let k_hi = count_eigenvalues_below(spec, omega, l, hi)?;
    if k_hi < k_lo {
        return Ok(Vec::new());
    }
    (k_lo..=k_hi)
        .into_par_iter()
        .map(|k| {
            let e = bisect_index(spec, omega, l, k, lo, hi, tol)?;
            let mut pair = eigenpair_at(spec, omega, l, k, e)?;
            pair.boundary_ambiguous = e.abs() > spec.e_max - tol;
            Ok(pair)
        })
        .collect()
}

/// Normalized `u_{-L}` at energy `e`, sampled 512 times per unit cell.
pub fn eigenpair_at(spec: &ModelSpec, omega: &[f64], l: usize, k: usize, e: f64) -> Result<EigenPair> {
    check_omega(omega, l)?;
    let q = spec.full_potential(omega, first_cell(l));
    let lf = l as f64;
    let n = 2 * l * EIGENFUNCTION_SAMPLES_PER_CELL;
    let h = 2.0 * lf / n as f64;
    let grid: Vec<f64> = (0..=n).map(|i| if i == n { lf } else { -lf + i as f64 * h }).collect();
    let out = prufer::prufer_solve(&q, e, -lf, lf, 0.0, &grid, &OdeOptions::default(), Steps::Adaptive)?;
    let mut v: Vec<f64> = out.samples.iter().map(|s| s[1].exp() * s[0].sin()).collect();
    let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
    let norm = quad::simpson(&sq, h).sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
    Ok(EigenPair {
        index_k: k,
        energy: e,
        l2_norm_check: quad::simpson(&sq, h),
        grid,
        eigenfunction: v,
        boundary_ambiguous: false,
    })
}

/// Wrapped interior phases of the eigenfunction and its branch index.
pub fn eigenfunction_phase_profile(pair: &EigenPair, spec: &ModelSpec, omega: &[f64], l: usize) -> Result<PhaseProfile> {
    check_omega(omega, l)?;
    let q = spec.full_potential(omega, first_cell(l));
    let lf = l as f64;
    let sites: Vec<f64> = (1..2 * l).map(|i| -lf + i as f64).collect();
    let out = prufer::prufer_solve(&q, pair.energy, -lf, lf, 0.0, &sites, &OdeOptions::default(), Steps::Adaptive)?;
    let period = spec.torus_length();
    Ok(PhaseProfile {
        theta_values: out.samples.iter().map(|s| s[0].rem_euclid(period)).collect(),
        branch_index_j: pair.index_k % (2 * spec.phase_bound_n as usize),
    })
}

/// CSV with columns `k, E_k, x, v` (one row per sample).
pub fn eigenpairs_to_csv(pairs: &[EigenPair]) -> String {
    let mut s = String::from("k,E_k,x,v\n");
    for p in pairs {
        for (x, v) in p.grid.iter().zip(&p.eigenfunction) {
            let _ = writeln!(s, "{},{},{},{}", p.index_k, p.energy, x, v);
        }
    }
    s
}

const DENSE_MAX_NODES: f64 = 1e5;

/// Symmetric tridiagonal matrix of the central-difference Dirichlet problem
/// with cell-averaged potential.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    pub h: f64,
    pub diag: Vec<f64>,
}

impl DenseOperator {
    pub fn new(q: &dyn Potential, lo: f64, hi: f64, h: f64) -> Result<Self> {
        let cells = (hi - lo) / h;
        if !(h > 0.0) || cells > DENSE_MAX_NODES {
            return Err(Error::InvalidInput(format!("mesh h = {h} gives {cells:.0} nodes; at most 1e5 allowed")));
        }
        let n = cells.round() as usize;
        if n < 2 || (cells - n as f64).abs() > 1e-9 * cells {
            return Err(Error::InvalidInput(format!("mesh h = {h} does not divide the interval length {}", hi - lo)));
        }
        let h = (hi - lo) / n as f64;
        let mut breaks = Vec::new();
        q.breakpoints(lo, hi, &mut breaks);
        breaks.sort_by(|a, b| a.total_cmp(b));
        let inv = 1.0 / (h * h);
        let diag = (1..n)
            .map(|i| {
                let x = lo + i as f64 * h;
                let (a, b) = (x - 0.5 * h, x + 0.5 * h);
                let mut pts = vec![a];
                let s = breaks.partition_point(|&t| t <= a);
                pts.extend(breaks[s..].iter().copied().take_while(|&t| t < b));
                pts.push(b);
                let avg: f64 = pts.windows(2).map(|w| quad::gauss_legendre(|t| q.value(t), w[0], w[1], 4)).sum::<f64>() / h;
                2.0 * inv + avg
            })
            .collect();
        Ok(Self { h, diag })
    }

    /// Number of eigenvalues strictly below `e` (Sturm sequence).
    pub fn count_below(&self, e: f64) -> usize {
        let off2 = 1.0 / (self.h * self.h).powi(2);
        let mut count = 0;
        let mut d = 1.0;
        for (i, &a) in self.diag.iter().enumerate() {
            d = if i == 0 { a - e } else { a - e - off2 / d };
            if d == 0.0 {
                d = -f64::EPSILON * (1.0 + a.abs());
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// The `k`-th eigenvalue (1-based) in `[lo, hi]`.
    pub fn eigenvalue(&self, k: usize, mut lo: f64, mut hi: f64) -> f64 {
        while hi - lo > 1e-14 * (1.0 + lo.abs().max(hi.abs())) {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid) >= k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Gershgorin interval containing the spectrum.
    pub fn bounds(&self) -> (f64, f64) {
        let off = 1.0 / (self.h * self.h);
        let lo = self.diag.iter().fold(f64::INFINITY, |m, &d| m.min(d - 2.0 * off));
        let hi = self.diag.iter().fold(f64::NEG_INFINITY, |m, &d| m.max(d + 2.0 * off));
        (lo, hi)
    }
}

/// Richardson-extrapolated finite-difference eigenvalues in
/// `[-E_max, E_max]`, from meshes `h` and `h/2`.
pub fn dense_oracle_eigenvalues(spec: &ModelSpec, omega: &[f64], l: usize, mesh_h: f64) -> Result<Vec<f64>> {
    check_omega(omega, l)?;
    let q = spec.full_potential(omega, first_cell(l));
    let lf = l as f64;
    let coarse = DenseOperator::new(&q, -lf, lf, mesh_h)?;
    let fine = DenseOperator::new(&q, -lf, lf, 0.5 * mesh_h)?;
    let margin = 1.0;
    let (lo_c, _) = coarse.bounds();
    let (lo_f, _) = fine.bounds();
    let lo = lo_c.min(lo_f).min(-spec.e_max - margin);
    let hi = spec.e_max + margin;
    let k_lo = coarse.count_below(-spec.e_max - margin).min(fine.count_below(-spec.e_max - margin)) + 1;
    let k_hi = coarse.count_below(hi).max(fine.count_below(hi));
    let wide = hi + 10.0 * margin + spec.e_max;
    let vals: Vec<f64> = (k_lo..=k_hi)
        .into_par_iter()
        .map(|k| {
            let ec = coarse.eigenvalue(k, lo, wide);
            let ef = fine.eigenvalue(k, lo, wide);
            (4.0 * ef - ec) / 3.0
        })
        .collect();
    Ok(vals.into_iter().filter(|e| e.abs() <= spec.e_max).collect())
}

/// Single-mesh finite-difference eigenvalues in the window (no extrapolation).
pub fn dense_eigenvalues_single_mesh(spec: &ModelSpec, omega: &[f64], l: usize, mesh_h: f64) -> Result<Vec<f64>> {
    check_omega(omega, l)?;
    let q = spec.full_potential(omega, first_cell(l));
    let lf = l as f64;
    let op = DenseOperator::new(&q, -lf, lf, mesh_h)?;
    let (lo, _) = op.bounds();
    let k_lo = op.count_below(-spec.e_max) + 1;
    let k_hi = op.count_below(spec.e_max);
    Ok((k_lo..=k_hi).map(|k| op.eigenvalue(k, lo.min(-spec.e_max), spec.e_max)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Profile};

    fn free(e_max: f64) -> ModelSpec {
        let mut c = ModelConfig::reference();
        c.e_max = e_max;
        c.build().unwrap()
    }

    #[test]
    fn right_end_phase_examples() {
        let spec = free(3.0);
        let p = phase_at_right_end(&spec, &[0.0, 0.0], 1, 0.0).unwrap();
        assert!((p - 2f64.atan()).abs() < 1e-9);
        let p = phase_at_right_end(&spec, &[0.0, 0.0], 1, PI * PI / 4.0).unwrap();
        assert!((p - PI).abs() < 1e-9);
    }

    #[test]
    fn counting_examples() {
        let spec = free(3.0);
        assert_eq!(count_eigenvalues_below(&spec, &[0.0, 0.0], 1, 1.0).unwrap(), 0);
        assert_eq!(count_eigenvalues_below(&spec, &[0.0, 0.0], 1, 3.0).unwrap(), 1);
    }

    #[test]
    fn window_examples() {
        let pairs = find_eigenvalues_in_window(&free(3.0), &[0.0, 0.0], 1, 1e-10).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].index_k, 1);
        assert!((pairs[0].energy - PI * PI / 4.0).abs() < 1e-9);
        assert!((pairs[0].l2_norm_check - 1.0).abs() < 1e-8);
        assert!(pairs[0].eigenfunction.last().unwrap().abs() < 1e-8);
        assert!(find_eigenvalues_in_window(&free(1.0), &[0.0, 0.0], 1, 1e-10).unwrap().is_empty());
    }

    #[test]
    fn ground_state_profile() {
        let spec = free(3.0);
        let pairs = find_eigenvalues_in_window(&spec, &[0.0, 0.0], 1, 1e-10).unwrap();
        let prof = eigenfunction_phase_profile(&pairs[0], &spec, &[0.0, 0.0], 1).unwrap();
        assert_eq!(prof.theta_values.len(), 1);
        assert!((prof.theta_values[0] - PI / 2.0).abs() < 1e-8);
        assert_eq!(prof.branch_index_j, 1);
    }

    #[test]
    fn dense_oracle_free_and_shifted() {
        let spec = free(3.0);
        let ev = dense_oracle_eigenvalues(&spec, &[0.0, 0.0], 1, 1e-2).unwrap();
        assert!((ev[0] - PI * PI / 4.0).abs() < 1e-7, "{ev:?}");
        let mut c = ModelConfig::reference();
        c.background = Profile::Constant { value: 5.0 };
        c.e_max = 8.0;
        let shifted = dense_eigenvalues_single_mesh(&c.build().unwrap(), &[0.0, 0.0], 1, 1e-2).unwrap();
        let base = dense_eigenvalues_single_mesh(&free(8.0), &[0.0, 0.0], 1, 1e-2).unwrap();
        assert!((shifted[0] - base[0] - 5.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let spec = free(3.0);
        assert!(phase_at_right_end(&spec, &[0.0], 1, 0.0).is_err());
        assert!(dense_oracle_eigenvalues(&spec, &[0.0, 0.0], 1, 1e-6).is_err());
        assert!(find_eigenvalues_in_window(&spec, &[0.0, 0.0], 1, 0.0).is_err());
    }
}

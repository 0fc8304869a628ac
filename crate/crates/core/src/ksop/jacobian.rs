//! Jacobian of `ω ↦ (E_k, θ_{-L+1}, …, θ_{L-1})` and the structured
//! determinant identity behind its closed form.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ModelSpec, Profile};
use crate::ode::{OdeOptions, Steps};
use crate::prufer;
use crate::roots;
use crate::spectral;

/// The matrix with first row `a₁`, and row `i` equal to `b_i` left of the
/// diagonal and `a_i` on and right of it.
pub fn structured_matrix(a: &[f64], b: &[f64]) -> Result<DMatrix<f64>> {
    let n = a.len();
    if n == 0 || b.len() != n {
        return Err(Error::InvalidInput(format!("need nonempty a and b of equal length, got {} and {}", n, b.len())));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| if i == 0 || j >= i { a[i] } else { b[i] }))
}

/// `(a₁ ∏_{i≥2} (a_i - b_i), det of the explicit matrix by LU)`.
pub fn structured_determinant(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    let dense = structured_matrix(a, b)?.lu().determinant();
    let closed = a[0] * a.iter().zip(b).skip(1).map(|(x, y)| x - y).product::<f64>();
    Ok((closed, dense))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JacobianCheck {
    pub numeric_det: f64,
    pub analytic_det: f64,
    pub rel_error: f64,
    pub energy: f64,
    /// Rows `(E, θ_{-L+1}, …, θ_{L-1})`, columns `ω_{-L+1}, …, ω_L`.
    pub numeric_jacobian: Vec<Vec<f64>>,
    /// `∫ f_n v_k²` for each cell.
    pub feynman_hellmann: Vec<f64>,
}

impl JacobianCheck {
    /// Largest deviation of the numeric first row from `∫ f_n v_k²`.
    pub fn feynman_hellmann_error(&self) -> f64 {
        self.numeric_jacobian[0].iter().zip(&self.feynman_hellmann).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

struct Replayed<'a> {
    spec: &'a ModelSpec,
    l: usize,
    mesh: Vec<f64>,
    sites: Vec<f64>,
    opts: &'a OdeOptions,
}

impl Replayed<'_> {
    fn solve(&self, omega: &[f64], e: f64, sample: bool) -> Result<crate::ode::OdeOutput<2>> {
        let q = self.spec.full_potential(omega, 1 - self.l as i64);
        let lf = self.l as f64;
        let sites: &[f64] = if sample { &self.sites } else { &[] };
        prufer::prufer_solve(&q, e, -lf, lf, 0.0, sites, self.opts, Steps::Replay(&self.mesh))
    }

    /// Energy where the replayed right-end phase equals `kπ`, near `e0`.
    fn track(&self, omega: &[f64], k: usize, e0: f64, spread: f64) -> Result<f64> {
        let target = k as f64 * PI;
        let f = |e: f64| Ok(self.solve(omega, e, false)?.end[0] - target);
        let mut d = spread.max(1e-8);
        for _ in 0..40 {
            let (a, b) = (e0 - d, e0 + d);
            let (fa, fb) = (f(a)?, f(b)?);
            if fa <= 0.0 && fb >= 0.0 {
                return roots::brent(f, a, b, fa, fb, 1e-15, 200);
            }
            d *= 2.0;
        }
        Err(Error::Tracking(format!("eigenvalue {k} lost near E = {e0}")))
    }
}

/// Finite-difference Jacobian determinant against the closed form built from
/// `u_{±L}` and `R_{±L}`.
pub fn jacobian_check(spec: &ModelSpec, omega: &[f64], l: usize, k: usize, h: f64) -> Result<JacobianCheck> {
    if !(1..=3).contains(&l) {
        return Err(Error::InvalidInput(format!("jacobian check supports L <= 3, got {l}")));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("step must be positive, got {h}")));
    }
    let lf = l as f64;
    let first = 1 - l as i64;
    let e_k = spectral::eigenvalue_by_index(spec, omega, l, k, 1e-14)?;
    let opts = OdeOptions { record_mesh: true, ..OdeOptions::with_tol(1e-11) };
    let q = spec.full_potential(omega, first);
    let base = prufer::prufer_solve(&q, e_k, -lf, lf, 0.0, &[], &opts, Steps::Adaptive)?;
    let sites: Vec<f64> = (1..2 * l).map(|i| -lf + i as f64).collect();
    let rep = Replayed { spec, l, mesh: base.mesh, sites, opts: &opts };
    let e_k = rep.track(omega, k, e_k, 1e-9)?;

    let dim = 2 * l;
    let spread = 4.0 * h * spec.single_site.sup_norm + 1e-9;
    let mut jac = vec![vec![0.0; dim]; dim];
    for n in 0..dim {
        let mut plus = omega.to_vec();
        let mut minus = omega.to_vec();
        plus[n] += h;
        minus[n] -= h;
        let ep = rep.track(&plus, k, e_k, spread)?;
        let em = rep.track(&minus, k, e_k, spread)?;
        let tp = rep.solve(&plus, ep, true)?.samples;
        let tm = rep.solve(&minus, em, true)?.samples;
        jac[0][n] = (ep - em) / (2.0 * h);
        for i in 0..dim - 1 {
            jac[i + 1][n] = (tp[i][0] - tm[i][0]) / (2.0 * h);
        }
    }
    let numeric_det = DMatrix::from_fn(dim, dim, |i, j| jac[i][j]).lu().determinant();

    let c = closed_form(spec, omega, l, e_k)?;
    let analytic_det = c.det;
    Ok(JacobianCheck {
        numeric_det,
        analytic_det,
        rel_error: (numeric_det - analytic_det).abs() / analytic_det.abs(),
        energy: e_k,
        numeric_jacobian: jac,
        feynman_hellmann: c.fh,
    })
}

struct ClosedForm {
    det: f64,
    fh: Vec<f64>,
}

/// Per-cell `(ln R at the far end, ∫ f_i u², ∫ u²)` for a solution carried
/// cell by cell; amplitudes are absolute (not renormalized per cell).
pub(crate) fn cell_masses(
    spec: &ModelSpec,
    omega: &[f64],
    l: usize,
    e: f64,
    forward: bool,
) -> Result<Vec<(i64, f64, f64, f64)>> {
    let first = 1 - l as i64;
    let q = spec.full_potential(omega, first);
    let one = Profile::Constant { value: 1.0 };
    let opts = OdeOptions::with_tol(1e-12);
    let cells: Vec<i64> = if forward { (first..=l as i64).collect() } else { (first..=l as i64).rev().collect() };
    let (mut phi, mut ln_r) = (0.0f64, 0.0f64);
    let mut out = Vec::new();
    for i in cells {
        let (a, b) = ((i - 1) as f64, i as f64);
        let (from, to) = if forward { (a, b) } else { (b, a) };
        let fi = spec.single_site.profile.shifted(-(i as f64));
        let wf = prufer::prufer_weighted(&q, e, from, to, phi, &fi, &[], &opts, Steps::Adaptive)?;
        let w1 = prufer::prufer_weighted(&q, e, from, to, phi, &one, &[], &opts, Steps::Adaptive)?;
        let scale = (2.0 * ln_r).exp();
        let end_ln_r = ln_r + wf.end[1];
        out.push((i, end_ln_r, scale * wf.end[2].abs(), scale * w1.end[2].abs()));
        phi = wf.end[0];
        ln_r = end_ln_r;
    }
    Ok(out)
}

fn closed_form(spec: &ModelSpec, omega: &[f64], l: usize, e: f64) -> Result<ClosedForm> {
    let left = cell_masses(spec, omega, l, e, true)?;
    let right = cell_masses(spec, omega, l, e, false)?;
    let li = l as i64;
    let mut log_det = 0.0;
    let mut sign = 1.0;
    let mut acc = |v: f64| {
        sign *= v.signum();
        log_det += v.abs().ln();
    };
    // Left solution: cells -L+1..=0 contribute ∫ f_i u_{-L}², and R_{-L}(i)
    // at the right end i of each of those cells.
    for &(i, ln_r, fmass, _) in &left {
        if i <= 0 {
            acc(fmass);
            acc((-2.0 * ln_r).exp());
        }
    }
    // Right solution: cell i spans [i-1, i]; carried backward, the far end is
    // i-1, so R_L(i) for i = 1..L-1 is the end amplitude of cell i+1.
    let total_right: f64 = right.iter().map(|c| c.3).sum();
    for &(i, ln_r, fmass, _) in &right {
        if i >= 1 {
            acc(fmass);
        }
        if i >= 2 && i <= li {
            acc((-2.0 * ln_r).exp());
        }
    }
    acc(1.0 / total_right);
    let mut fh = vec![0.0; 2 * l];
    for &(i, _, fmass, _) in &right {
        fh[(i - (1 - li)) as usize] = fmass / total_right;
    }
    Ok(ClosedForm { det: sign * log_det.exp(), fh })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structured_examples() {
        let (c, d) = structured_determinant(&[1.0, 2.0, 3.0], &[0.0, 1.0, 1.0]).unwrap();
        assert_eq!(c, 2.0);
        assert!((d - 2.0).abs() < 1e-12);
        let (c, _) = structured_determinant(&[2.0, 3.0, 4.0], &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(c, 24.0);
        let (c, d) = structured_determinant(&[2.0, 3.0, 4.0], &[9.0, 3.0, 1.0]).unwrap();
        assert_eq!(c, 0.0);
        assert!(d.abs() < 1e-12);
    }

    #[test]
    fn free_two_cell_jacobian() {
        let spec = ModelSpec::reference();
        let chk = jacobian_check(&spec, &[0.0, 0.0], 1, 1, 1e-4).unwrap();
        assert!(chk.rel_error < 1e-4, "{chk:?}");
        assert!(chk.feynman_hellmann_error() < 1e-6, "{chk:?}");
        let row = &chk.numeric_jacobian[0];
        assert!((row[0] - row[1]).abs() < 1e-6);
    }
}

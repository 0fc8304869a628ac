//! Prüfer phase/amplitude integration of `-u'' + q u = E u`.
//!
//! With `u = R sin φ`, `u' = R cos φ`:
//! `φ' = 1 - (1 + q - E) sin²φ` and `(ln R)' = ½ (1 + q - E) sin 2φ`.

use std::f64::consts::FRAC_PI_4;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Potential;
use crate::ode::{self, OdeOptions, OdeOutput, Steps};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Direction {
    Forward,
    Backward,
}

/// Initial data `u(c) = sin θ`, `u'(c) = cos θ`, so `R(c) = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InitialData {
    pub anchor: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PruferTrajectory {
    /// Increasing sample points covering the integration interval.
    pub grid: Vec<f64>,
    pub phase: Vec<f64>,
    pub log_amplitude: Vec<f64>,
    /// `(φ, ln R)` at the terminal point of the integration.
    pub endpoint: (f64, f64),
    pub direction: Direction,
}

impl PruferTrajectory {
    pub fn u(&self) -> Vec<f64> {
        self.phase.iter().zip(&self.log_amplitude).map(|(p, l)| l.exp() * p.sin()).collect()
    }

    pub fn du(&self) -> Vec<f64> {
        self.phase.iter().zip(&self.log_amplitude).map(|(p, l)| l.exp() * p.cos()).collect()
    }

    /// CSV with columns `x, phi, lnR, u, du`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,phi,lnR,u,du\n");
        for i in 0..self.grid.len() {
            let (p, l) = (self.phase[i], self.log_amplitude[i]);
            let r = l.exp();
            let _ = writeln!(s, "{},{},{},{},{}", self.grid[i], p, l, r * p.sin(), r * p.cos());
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// `base + λ·extra`.
pub struct Combined<'a> {
    pub base: &'a dyn Potential,
    pub extra: &'a dyn Potential,
    pub lambda: f64,
}

impl Potential for Combined<'_> {
    fn value(&self, x: f64) -> f64 {
        let b = self.base.value(x);
        if self.lambda == 0.0 {
            b
        } else {
            b + self.lambda * self.extra.value(x)
        }
    }

    fn breakpoints(&self, lo: f64, hi: f64, out: &mut Vec<f64>) {
        self.base.breakpoints(lo, hi, out);
        if self.lambda != 0.0 {
            self.extra.breakpoints(lo, hi, out);
        }
    }
}

fn collect_breaks(pots: &[&dyn Potential], from: f64, to: f64) -> Vec<f64> {
    let (lo, hi) = if from < to { (from, to) } else { (to, from) };
    let mut b = Vec::new();
    for p in pots {
        p.breakpoints(lo, hi, &mut b);
    }
    b
}

fn check_interval(from: f64, to: f64) -> Result<()> {
    if !(from.is_finite() && to.is_finite()) || from == to {
        return Err(Error::InvalidInput(format!("integration interval [{from}, {to}] must be finite and non-degenerate")));
    }
    Ok(())
}

/// Phase only; the phase equation does not involve `R`.
pub fn phase_end(q: &dyn Potential, e: f64, from: f64, to: f64, theta0: f64, opts: &OdeOptions) -> Result<f64> {
    check_interval(from, to)?;
    let breaks = collect_breaks(&[q], from, to);
    let rhs = |x: f64, y: &[f64; 1]| {
        let s = y[0].sin();
        [1.0 - (1.0 + q.value(x) - e) * s * s]
    };
    Ok(ode::solve(rhs, from, to, [theta0], &breaks, &[], opts, Steps::Adaptive)?.end[0])
}

/// Raw `(φ, ln R)` solve.
pub fn prufer_solve(
    q: &dyn Potential,
    e: f64,
    from: f64,
    to: f64,
    theta0: f64,
    sample_at: &[f64],
    opts: &OdeOptions,
    steps: Steps<'_>,
) -> Result<OdeOutput<2>> {
    check_interval(from, to)?;
    let breaks = collect_breaks(&[q], from, to);
    let rhs = |x: f64, y: &[f64; 2]| {
        let a = 1.0 + q.value(x) - e;
        let (s, c) = y[0].sin_cos();
        [1.0 - a * s * s, a * s * c]
    };
    ode::solve(rhs, from, to, [theta0, 0.0], &breaks, sample_at, opts, steps)
}

/// `(φ, ln R, ∫_from^x w u²)` with the integral oriented along the
/// integration direction.
#[allow(clippy::too_many_arguments)]
pub fn prufer_weighted(
    q: &dyn Potential,
    e: f64,
    from: f64,
    to: f64,
    theta0: f64,
    w: &dyn Potential,
    sample_at: &[f64],
    opts: &OdeOptions,
    steps: Steps<'_>,
) -> Result<OdeOutput<3>> {
    check_interval(from, to)?;
    let breaks = collect_breaks(&[q, w], from, to);
    let rhs = |x: f64, y: &[f64; 3]| {
        let a = 1.0 + q.value(x) - e;
        let (s, c) = y[0].sin_cos();
        [1.0 - a * s * s, a * s * c, w.value(x) * (2.0 * y[1]).exp() * s * s]
    };
    ode::solve(rhs, from, to, [theta0, 0.0, 0.0], &breaks, sample_at, opts, steps)
}

const SAMPLES_PER_UNIT: f64 = 64.0;

fn uniform_grid(lo: f64, hi: f64, per_unit: f64) -> Vec<f64> {
    let n = ((hi - lo) * per_unit).ceil().max(1.0) as usize;
    (0..=n).map(|i| if i == n { hi } else { lo + (hi - lo) * i as f64 / n as f64 }).collect()
}

/// Integrate the Prüfer system from `from` to `to` (either direction) with
/// `φ(from) = theta0`, `ln R(from) = 0`.
pub fn integrate_prufer(q: &dyn Potential, e: f64, from: f64, to: f64, theta0: f64, tol: f64) -> Result<PruferTrajectory> {
    check_interval(from, to)?;
    let opts = OdeOptions::with_tol(tol);
    let (lo, hi) = if from < to { (from, to) } else { (to, from) };
    let mut per_unit = SAMPLES_PER_UNIT;
    loop {
        let mut grid = uniform_grid(lo, hi, per_unit);
        if from > to {
            grid.reverse();
        }
        let out = prufer_solve(q, e, from, to, theta0, &grid, &opts, Steps::Adaptive)?;
        let jump = out.samples.windows(2).map(|w| (w[1][0] - w[0][0]).abs()).fold(0.0, f64::max);
        if jump < FRAC_PI_4 || per_unit > 1e6 {
            let mut phase: Vec<f64> = out.samples.iter().map(|s| s[0]).collect();
            let mut log_amplitude: Vec<f64> = out.samples.iter().map(|s| s[1]).collect();
            let direction = if from < to { Direction::Forward } else { Direction::Backward };
            if direction == Direction::Backward {
                grid.reverse();
                phase.reverse();
                log_amplitude.reverse();
            }
            return Ok(PruferTrajectory {
                grid,
                phase,
                log_amplitude,
                endpoint: (out.end[0], out.end[1]),
                direction,
            });
        }
        per_unit *= 4.0;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CartesianTrajectory {
    pub grid: Vec<f64>,
    pub u: Vec<f64>,
    pub du: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolutionOutput {
    pub u_end: f64,
    pub du_end: f64,
    pub trajectory: CartesianTrajectory,
}

/// Integrate `(u, u')` directly.
pub fn integrate_solution(
    q: &dyn Potential,
    e: f64,
    from: f64,
    to: f64,
    u0: f64,
    du0: f64,
    tol: f64,
) -> Result<SolutionOutput> {
    check_interval(from, to)?;
    let opts = OdeOptions::with_tol(tol);
    let breaks = collect_breaks(&[q], from, to);
    let (lo, hi) = if from < to { (from, to) } else { (to, from) };
    let mut grid = uniform_grid(lo, hi, SAMPLES_PER_UNIT);
    if from > to {
        grid.reverse();
    }
    let rhs = |x: f64, y: &[f64; 2]| [y[1], (q.value(x) - e) * y[0]];
    let out = ode::solve(rhs, from, to, [u0, du0], &breaks, &grid, &opts, Steps::Adaptive)?;
    let mut u: Vec<f64> = out.samples.iter().map(|s| s[0]).collect();
    let mut du: Vec<f64> = out.samples.iter().map(|s| s[1]).collect();
    if from > to {
        grid.reverse();
        u.reverse();
        du.reverse();
    }
    Ok(SolutionOutput { u_end: out.end[0], du_end: out.end[1], trajectory: CartesianTrajectory { grid, u, du } })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivativeCheck {
    pub numeric: f64,
    pub analytic: f64,
}

impl DerivativeCheck {
    pub fn abs_error(&self) -> f64 {
        (self.numeric - self.analytic).abs()
    }

    pub fn rel_error(&self) -> f64 {
        self.abs_error() / self.analytic.abs().max(f64::MIN_POSITIVE)
    }

    /// Relative error with an absolute floor for near-zero derivatives.
    pub fn within(&self, rel: f64, abs: f64) -> bool {
        self.abs_error() <= rel * self.analytic.abs() + abs
    }
}

fn fd_options() -> OdeOptions {
    OdeOptions { record_mesh: true, ..OdeOptions::default() }
}

/// Five-point central difference; the three-point rule's `h²φ'''/6` error
/// reaches 1e-5 relative when `R` varies strongly.
fn central_difference(f: impl Fn(f64) -> Result<f64>, x: f64, h: f64) -> Result<f64> {
    let d1 = f(x + h)? - f(x - h)?;
    let d2 = f(x + 2.0 * h)? - f(x - 2.0 * h)?;
    Ok((8.0 * d1 - d2) / (12.0 * h))
}

fn check_step(h: f64) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidInput(format!("finite-difference step must be positive, got {h}")));
    }
    Ok(())
}

/// `∂φ(to)/∂θ₀` by central differences against `1 / R(to)²`.
pub fn phase_theta_derivative(
    q: &dyn Potential,
    e: f64,
    from: f64,
    to: f64,
    theta0: f64,
    h: f64,
) -> Result<DerivativeCheck> {
    check_step(h)?;
    let opts = fd_options();
    let base = prufer_solve(q, e, from, to, theta0, &[], &opts, Steps::Adaptive)?;
    let replay = Steps::Replay(&base.mesh);
    let numeric = central_difference(|t| Ok(prufer_solve(q, e, from, to, t, &[], &opts, replay)?.end[0]), theta0, h)?;
    Ok(DerivativeCheck { numeric, analytic: (-2.0 * base.end[1]).exp() })
}

/// `∂φ(to)/∂λ` for `q = base_q + λ V` against `-R⁻² ∫_from^to V u²`.
#[allow(clippy::too_many_arguments)]
pub fn phase_lambda_derivative(
    base_q: &dyn Potential,
    v: &dyn Potential,
    lambda: f64,
    e: f64,
    from: f64,
    to: f64,
    theta0: f64,
    h: f64,
) -> Result<DerivativeCheck> {
    check_step(h)?;
    let opts = fd_options();
    // Record with λ ≠ 0 so the mesh includes V's breakpoints.
    let q = Combined { base: base_q, extra: v, lambda };
    let breaks = collect_breaks(&[base_q, v], from, to);
    let base = weighted_with_breaks(&q, e, from, to, theta0, v, &breaks, &opts, Steps::Adaptive)?;
    let replay = Steps::Replay(&base.mesh);
    let phase_at = |lam: f64| -> Result<f64> {
        let q = Combined { base: base_q, extra: v, lambda: lam };
        Ok(weighted_with_breaks(&q, e, from, to, theta0, v, &breaks, &opts, replay)?.end[0])
    };
    let numeric = central_difference(phase_at, lambda, h)?;
    Ok(DerivativeCheck { numeric, analytic: -(-2.0 * base.end[1]).exp() * base.end[2] })
}

/// `∂φ(to)/∂E` against `R⁻² ∫_from^to u²`.
pub fn phase_energy_derivative(
    q: &dyn Potential,
    e: f64,
    from: f64,
    to: f64,
    theta0: f64,
    h: f64,
) -> Result<DerivativeCheck> {
    check_step(h)?;
    let opts = fd_options();
    let one = crate::model::Profile::Constant { value: 1.0 };
    let base = prufer_weighted(q, e, from, to, theta0, &one, &[], &opts, Steps::Adaptive)?;
    let replay = Steps::Replay(&base.mesh);
    let numeric = central_difference(|en| Ok(prufer_solve(q, en, from, to, theta0, &[], &opts, replay)?.end[0]), e, h)?;
    Ok(DerivativeCheck { numeric, analytic: (-2.0 * base.end[1]).exp() * base.end[2] })
}

#[allow(clippy::too_many_arguments)]
fn weighted_with_breaks(
    q: &dyn Potential,
    e: f64,
    from: f64,
    to: f64,
    theta0: f64,
    w: &dyn Potential,
    breaks: &[f64],
    opts: &OdeOptions,
    steps: Steps<'_>,
) -> Result<OdeOutput<3>> {
    check_interval(from, to)?;
    let rhs = |x: f64, y: &[f64; 3]| {
        let a = 1.0 + q.value(x) - e;
        let (s, c) = y[0].sin_cos();
        [1.0 - a * s * s, a * s * c, w.value(x) * (2.0 * y[1]).exp() * s * s]
    };
    ode::solve(rhs, from, to, [theta0, 0.0, 0.0], breaks, &[], opts, steps)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub grid: Vec<f64>,
    /// `φ₂ - φ₁` at each grid point.
    pub gaps: Vec<f64>,
    pub min_gap: f64,
    pub argmin: f64,
    pub holds: bool,
}

/// Compare the phases of two forward systems with `q1 ≥ q2` and `θ2 ≥ θ1`.
#[allow(clippy::too_many_arguments)]
pub fn sturm_compare(
    q1: &dyn Potential,
    q2: &dyn Potential,
    e: f64,
    theta1: f64,
    theta2: f64,
    from: f64,
    to: f64,
    tol: f64,
) -> Result<ComparisonReport> {
    check_interval(from, to)?;
    if to < from {
        return Err(Error::InvalidInput("comparison runs in the forward direction only".into()));
    }
    if theta2 < theta1 {
        return Err(Error::InvalidInput(format!("need theta2 >= theta1, got {theta2} < {theta1}")));
    }
    let mut probe = uniform_grid(from, to, 1024.0);
    let mut breaks = collect_breaks(&[q1, q2], from, to);
    breaks.sort_by(|a, b| a.total_cmp(b));
    for w in breaks.windows(2) {
        probe.push(0.5 * (w[0] + w[1]));
    }
    if let Some(x) = probe.iter().copied().find(|&x| q1.value(x) < q2.value(x)) {
        return Err(Error::InvalidInput(format!("q1 < q2 at x = {x}")));
    }
    let t1 = integrate_prufer(q1, e, from, to, theta1, tol)?;
    let t2 = integrate_prufer(q2, e, from, to, theta2, tol)?;
    let grid = t1.grid.clone();
    // Both trajectories use the same grid unless one had to be refined.
    let p2: Vec<f64> = if t2.grid.len() == grid.len() { t2.phase.clone() } else { resample(&t2, &grid) };
    let p1: Vec<f64> = t1.phase.clone();
    let gaps: Vec<f64> = p2.iter().zip(&p1).map(|(a, b)| a - b).collect();
    let (i_min, &min_gap) = gaps.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("non-empty grid");
    Ok(ComparisonReport { argmin: grid[i_min], grid, min_gap, holds: min_gap >= -10.0 * tol, gaps })
}

fn resample(t: &PruferTrajectory, grid: &[f64]) -> Vec<f64> {
    grid.iter()
        .map(|&x| {
            let i = t.grid.partition_point(|&g| g < x).min(t.grid.len() - 1);
            t.phase[i]
        })
        .collect()
}

/// `∫_c^{c+ℓ} u²` for the solution with `u(c) = sin θ`, `u'(c) = cos θ`; since
/// `u² + u'² = 1` at `c` this is the local L² ratio.
pub fn local_l2_mass(q: &dyn Potential, e: f64, c: f64, ell: f64, theta: f64, tol: f64) -> Result<f64> {
    let one = crate::model::Profile::Constant { value: 1.0 };
    let out = prufer_weighted(q, e, c, c + ell, theta, &one, &[], &OdeOptions::with_tol(tol), Steps::Adaptive)?;
    Ok(out.end[2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Profile;
    use std::f64::consts::PI;

    const ZERO: Profile = Profile::Zero;

    #[test]
    fn free_rotation_at_unit_energy() {
        let t = integrate_prufer(&ZERO, 1.0, 0.0, 1.0, 0.0, 1e-10).unwrap();
        assert!((t.endpoint.0 - 1.0).abs() < 1e-12);
        assert!(t.endpoint.1.abs() < 1e-12);
    }

    #[test]
    fn linear_solution_at_zero_energy() {
        let t = integrate_prufer(&ZERO, 0.0, 0.0, 1.0, 0.0, 1e-10).unwrap();
        assert!((t.endpoint.0 - FRAC_PI_4).abs() < 1e-9);
        assert!((t.endpoint.1.exp() - 2f64.sqrt()).abs() < 1e-9);
        for x in [0.5, 2.0, 10.0] {
            let t = integrate_prufer(&ZERO, 0.0, 0.0, x, 0.0, 1e-10).unwrap();
            assert!((t.endpoint.0.tan() - x).abs() < 1e-8 * x.max(1.0), "x={x}");
        }
    }

    #[test]
    fn backward_trajectory_has_increasing_grid() {
        let t = integrate_prufer(&ZERO, 2.0, 0.0, -1.0, 0.3, 1e-10).unwrap();
        assert_eq!(t.direction, Direction::Backward);
        assert!(t.grid.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(*t.phase.last().unwrap(), 0.3);
        assert!((t.endpoint.0 - t.phase[0]).abs() < 1e-15);
    }

    #[test]
    fn cartesian_examples() {
        let s = integrate_solution(&ZERO, 0.0, -1.0, 1.0, 0.0, 1.0, 1e-10).unwrap();
        assert!((s.u_end - 2.0).abs() < 1e-9 && (s.du_end - 1.0).abs() < 1e-9);
        let s = integrate_solution(&ZERO, PI * PI, 0.0, 1.0, 0.0, PI, 1e-10).unwrap();
        assert!(s.u_end.abs() < 1e-8);
    }

    #[test]
    fn derivative_examples() {
        let d = phase_theta_derivative(&ZERO, 1.0, 0.0, 1.0, 0.4, 1e-4).unwrap();
        assert!((d.analytic - 1.0).abs() < 1e-12);
        let d = phase_theta_derivative(&ZERO, 0.0, 0.0, 1.0, 0.0, 1e-4).unwrap();
        assert!((d.analytic - 0.5).abs() < 1e-9 && d.rel_error() < 1e-6);
        let d = phase_energy_derivative(&ZERO, 1.0, 0.0, 1.0, 0.0, 1e-4).unwrap();
        assert!((d.analytic - (1.0 - 2f64.sin() / 2.0) / 2.0).abs() < 1e-9);
        assert!(d.rel_error() < 1e-6);
        let chi = Profile::indicator(-1.0, 0.0, 1.0);
        let d = phase_lambda_derivative(&ZERO, &chi, 0.7, 1.3, 0.0, -1.0, 0.2, 1e-4).unwrap();
        assert!(d.analytic > 0.0 && d.rel_error() < 1e-6, "{d:?}");
        let d = phase_lambda_derivative(&ZERO, &ZERO, 0.7, 1.3, 0.0, -1.0, 0.2, 1e-4).unwrap();
        assert_eq!(d.analytic, 0.0);
        assert!(d.numeric.abs() < 1e-12);
    }

    #[test]
    fn sturm_examples() {
        let r = sturm_compare(&ZERO, &ZERO, 1.5, 0.2, 0.2, 0.0, 1.0, 1e-10).unwrap();
        assert!(r.min_gap.abs() < 1e-15);
        let one = Profile::Constant { value: 1.0 };
        let r = sturm_compare(&one, &ZERO, 1.0, 0.0, 0.0, 0.0, 1.0, 1e-10).unwrap();
        assert!(r.holds && *r.gaps.last().unwrap() > 0.0);
        let r = sturm_compare(&ZERO, &ZERO, 1.0, 0.0, 0.3, 0.0, 1.0, 1e-10).unwrap();
        assert!(r.min_gap > 0.0);
        assert!(sturm_compare(&ZERO, &one, 1.0, 0.0, 0.0, 0.0, 1.0, 1e-10).is_err());
    }

    #[test]
    fn csv_has_expected_columns() {
        let t = integrate_prufer(&ZERO, 1.0, 0.0, 0.1, 0.0, 1e-10).unwrap();
        let csv = t.to_csv();
        assert!(csv.starts_with("x,phi,lnR,u,du\n"));
        assert_eq!(csv.lines().count(), t.grid.len() + 1);
    }
}

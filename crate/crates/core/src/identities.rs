//! Randomized checks of the Prüfer derivative formulas and the a priori
//! solution estimates.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{rng_for, Potential, Profile};
use crate::prufer;
use crate::quad::gauss_legendre;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub instances: usize,
    pub violations: usize,
    /// Largest relative error, or largest violation for inequalities.
    pub worst: f64,
    pub threshold: f64,
    /// Extra measured quantity (for `l2_lower_bound`, the smallest ratio).
    pub measured: Option<f64>,
}

impl IdentityCheck {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    fn new(name: &str, threshold: f64) -> Self {
        Self { name: name.into(), instances: 0, violations: 0, worst: 0.0, threshold, measured: None }
    }

    fn record(&mut self, err: f64) {
        self.instances += 1;
        self.worst = self.worst.max(err);
        if !(err <= self.threshold) {
            self.violations += 1;
        }
    }
}

/// A random bounded potential on `[lo, hi]` built from steps, a cosine and a
/// bump.
pub fn random_potential(rng: &mut ChaCha8Rng, lo: f64, hi: f64, scale: f64) -> Profile {
    let k = rng.gen_range(1..=4);
    let mut edges: Vec<f64> = (0..k).map(|_| rng.gen_range(lo..hi)).collect();
    edges.push(lo);
    edges.push(hi);
    edges.sort_by(|a, b| a.total_cmp(b));
    let values = (0..edges.len() - 1).map(|_| rng.gen_range(-scale..scale)).collect();
    let steps = Profile::Steps { edges, values };
    let cosine = Profile::Cosine {
        amplitude: rng.gen_range(0.0..scale / 2.0),
        period: rng.gen_range(0.5..3.0),
        phase: rng.gen_range(0.0..6.3),
        offset: 0.0,
    };
    let a = rng.gen_range(lo..hi);
    let b = rng.gen_range(a..hi);
    let bump = Profile::Bump { a, b: b.max(a + 1e-3), height: rng.gen_range(-scale..scale) };
    steps.plus(cosine).plus(bump)
}

fn breaks_of(ps: &[&Profile], lo: f64, hi: f64) -> Vec<f64> {
    let mut out = vec![lo, hi];
    for p in ps {
        p.breakpoints(lo, hi, &mut out);
    }
    out.sort_by(|a, b| a.total_cmp(b));
    out.dedup();
    out
}

/// `∫_lo^hi g` with the rule split at the breakpoints of `ps`.
fn integrate(g: impl Fn(f64) -> f64, ps: &[&Profile], lo: f64, hi: f64) -> f64 {
    breaks_of(ps, lo, hi).windows(2).map(|w| gauss_legendre(&g, w[0], w[1], 20)).sum()
}

/// Finite-difference checks of `∂φ/∂θ`, `∂φ/∂λ` and `∂φ/∂E`.
pub fn derivative_suite(instances: usize, seed: u64, h: f64, rel_tol: f64) -> Result<Vec<IdentityCheck>> {
    let mut theta = IdentityCheck::new("phase_theta_derivative", rel_tol);
    let mut lambda = IdentityCheck::new("phase_lambda_derivative", rel_tol);
    let mut energy = IdentityCheck::new("phase_energy_derivative", rel_tol);
    for i in 0..instances as u64 {
        let mut rng = rng_for(seed, i);
        let (from, to) = (0.0, rng.gen_range(0.5..2.0));
        let q = random_potential(&mut rng, from, to, 3.0);
        let e = rng.gen_range(-3.0..3.0);
        let th = rng.gen_range(0.0..std::f64::consts::TAU);
        let (from, to) = if rng.gen_bool(0.5) { (from, to) } else { (to, from) };
        theta.record(prufer::phase_theta_derivative(&q, e, from, to, th, h)?.rel_error());
        let (a, b) = (from.min(to), from.max(to));
        let a1 = rng.gen_range(a..b);
        let v = Profile::indicator(a1, rng.gen_range(a1..b).max(a1 + 0.05 * (b - a)), 1.0);
        let lam = rng.gen_range(-2.0..2.0);
        lambda.record(prufer::phase_lambda_derivative(&q, &v, lam, e, from, to, th, h)?.rel_error());
        energy.record(prufer::phase_energy_derivative(&q, e, from, to, th, h)?.rel_error());
    }
    Ok(vec![theta, lambda, energy])
}

/// Solution-estimate sandwich, continuous dependence, local `L²` lower bound
/// and Sturm phase ordering.
pub fn estimate_suite(instances: usize, seed: u64, slack: f64) -> Result<Vec<IdentityCheck>> {
    let tol = 1e-11;
    let mut sandwich = IdentityCheck::new("solution_sandwich", slack);
    let mut contdep = IdentityCheck::new("continuous_dependence", slack);
    let mut l2 = IdentityCheck::new("l2_lower_bound", slack);
    let mut sturm = IdentityCheck::new("sturm_ordering", slack);
    let mut min_ratio = f64::INFINITY;
    for i in 0..instances as u64 {
        let mut rng = rng_for(seed ^ 0x5eed, i);
        let len = rng.gen_range(0.3..2.0);
        let (lo, hi) = (0.0, len);
        let q1 = random_potential(&mut rng, lo, hi, 3.0);
        let q2 = random_potential(&mut rng, lo, hi, 3.0);
        let (y, x) = if rng.gen_bool(0.5) { (lo, hi) } else { (hi, lo) };
        let (u0, du0) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));

        // |u(x)|² + |u'(x)|² against the same at y times e^{±∫|1+q|}.
        let s = prufer::integrate_solution(&q1, 0.0, y, x, u0, du0, tol)?;
        let nx = s.u_end * s.u_end + s.du_end * s.du_end;
        let ny = u0 * u0 + du0 * du0;
        let int = integrate(|t| (1.0 + q1.eval(t)).abs(), &[&q1], lo, hi);
        let upper = ny * int.exp();
        let lower = ny * (-int).exp();
        sandwich.record(((nx - upper) / upper).max((lower - nx) / lower).max(0.0));

        let (v0, dv0) = (u0 + rng.gen_range(-0.1..0.1), du0 + rng.gen_range(-0.1..0.1));
        let s2 = prufer::integrate_solution(&q2, 0.0, y, x, v0, dv0, tol)?;
        let lhs = ((s.u_end - s2.u_end).powi(2) + (s.du_end - s2.du_end).powi(2)).sqrt();
        let a2 = integrate(|t| q2.eval(t).abs() + 1.0, &[&q2], lo, hi);
        let a12 = integrate(|t| q1.eval(t).abs() + q2.eval(t).abs() + 2.0, &[&q1, &q2], lo, hi);
        let d12 = integrate(|t| (q1.eval(t) - q2.eval(t)).abs(), &[&q1, &q2], lo, hi);
        let rhs = ((u0 - v0).powi(2) + (du0 - dv0).powi(2)).sqrt() * a2.exp() + ny * a12.exp() * d12;
        contdep.record(((lhs - rhs) / rhs).max(0.0));

        let th = rng.gen_range(0.0..std::f64::consts::TAU);
        let mass = prufer::local_l2_mass(&q1, 0.0, lo, len, th, tol)?;
        min_ratio = min_ratio.min(mass);
        l2.record(if mass > slack { 0.0 } else { slack - mass + f64::MIN_POSITIVE });

        // q_hi ≥ q_lo pointwise; the phase for q_lo with the larger start stays ahead.
        let bump = Profile::Bump { a: lo, b: hi, height: rng.gen_range(0.0..3.0) };
        let q_hi = q1.plus(bump).plus(Profile::Constant { value: rng.gen_range(0.0..1.0) });
        let th1 = rng.gen_range(0.0..3.0);
        let th2 = th1 + rng.gen_range(0.0..1.0);
        let e = rng.gen_range(-3.0..3.0);
        let rep = prufer::sturm_compare(&q_hi, &q1, e, th1, th2, lo, hi, tol)?;
        sturm.record((-rep.min_gap).max(0.0));
    }
    l2.measured = Some(min_ratio);
    Ok(vec![sandwich, contdep, l2, sturm])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        for c in derivative_suite(5, 1, 1e-4, 1e-6).unwrap() {
            assert!(c.passed(), "{c:?}");
            assert_eq!(c.instances, 5);
        }
        for c in estimate_suite(5, 1, 1e-8).unwrap() {
            assert!(c.passed(), "{c:?}");
        }
    }

    #[test]
    fn violations_are_counted() {
        let mut c = IdentityCheck::new("x", 1e-6);
        c.record(1e-7);
        c.record(1e-3);
        c.record(f64::NAN);
        assert_eq!((c.instances, c.violations), (3, 2));
    }
}

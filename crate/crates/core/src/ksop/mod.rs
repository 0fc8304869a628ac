//! Unit-cell integral operators on the phase torus `𝕋_N = ℝ / 2πNℤ`.
//!
//! For a cell background `g` on `[-1, 0]`, energy `E` and coupling `λ`, the
//! solution `u₀` starts at `x = 0` with phase `α` and `u₋₁` starts at
//! `x = -1` with phase `β`. `λ(β, α)` is the coupling for which both describe
//! the same solution.

mod assembly;
mod change;
mod export;
mod jacobian;
mod norms;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CouplingDensity, ModelSpec, Profile};
use crate::ode::{OdeOptions, Steps};
use crate::prufer::{self, Combined, PruferTrajectory};
use crate::roots;

pub use assembly::{
    assemble_minus, assemble_plus, boundary_vector_t1, boundary_vectors, discretize, Domain, DiscreteKernel, KernelCache, KernelKind,
    KernelMatrices,
};
pub use change::{phase_coordinates, reconstruct_couplings, PhaseCoordinates};
pub use export::{read_matrix, write_kernel, write_matrix, KernelManifest};
pub use jacobian::{jacobian_check, structured_determinant, structured_matrix, JacobianCheck};
pub(crate) use jacobian::cell_masses;
pub use norms::{
    absorption_difference, block_decompose, norm_1_to_1, norm_2_to_2, norm_2_to_2_power, norm_continuity_probe,
    BlockKernel, ContinuityPoint,
};

/// A point of `𝕋_N`, stored as its representative in `[0, 2πN)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub value: f64,
    pub period: f64,
}

impl PhasePoint {
    pub fn new(x: f64, n: u32) -> Self {
        let period = 2.0 * PI * n as f64;
        Self { value: x.rem_euclid(period), period }
    }

    pub fn shifted(&self, dx: f64) -> Self {
        Self { value: (self.value + dx).rem_euclid(self.period), period: self.period }
    }

    /// Circle distance.
    pub fn distance(&self, other: &PhasePoint) -> f64 {
        let d = (self.value - other.value).rem_euclid(self.period);
        d.min(self.period - d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LambdaSolution {
    pub lambda: f64,
    /// Phase mismatch at the solution, or the distance from the reachable
    /// range when no solution exists.
    pub residual: f64,
    pub exists: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSolutionPair {
    pub lambda: f64,
    /// `u₀(·, α, λ)` on `[-1, 0]`.
    pub u_plus: PruferTrajectory,
    /// `u₋₁(·, β, λ)` on `[-1, 0]`.
    pub u_minus: PruferTrajectory,
    /// `R₊(-1)`.
    pub r_plus_end: f64,
    /// `R₋(0)`.
    pub r_minus_end: f64,
    pub f_weighted_mass_plus: f64,
    pub f_weighted_mass_minus: f64,
}

/// `ln R` at the far end and `∫_{-1}^{0} f u²` for one cell solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellAmplitude {
    pub phase_end: f64,
    pub ln_r_end: f64,
    pub f_mass: f64,
}

/// Pointwise kernel values at one `(β, α)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct KernelValues {
    pub t0: f64,
    pub t1: f64,
    pub k1: f64,
    pub k2: f64,
    pub t0_tilde: f64,
}

/// One unit cell: background `g`, single-site `f`, density `r`, energy `E`.
#[derive(Debug, Clone)]
pub struct CellProblem {
    pub g: Profile,
    pub f: Profile,
    pub density: CouplingDensity,
    pub e: f64,
    pub n: u32,
    pub opts: OdeOptions,
}

impl CellProblem {
    pub fn new(spec: &ModelSpec, g: Profile, e: f64) -> Self {
        Self {
            g,
            f: spec.single_site.profile.clone(),
            density: spec.coupling.clone(),
            e,
            n: spec.phase_bound_n,
            opts: OdeOptions::default(),
        }
    }

    /// Cell `i`, i.e. `g_i = W₀` restricted to `[i-1, i]`.
    pub fn for_cell(spec: &ModelSpec, i: i64, e: f64) -> Self {
        Self::new(spec, spec.background.cell(i), e)
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.opts = OdeOptions::with_tol(tol);
        self
    }

    /// `(g - E, 0)`: same operator, energy absorbed into the background.
    pub fn energy_absorbed(&self) -> Self {
        let mut p = self.clone();
        p.g = self.g.plus(Profile::Constant { value: -self.e });
        p.e = 0.0;
        p
    }

    pub fn period(&self) -> f64 {
        2.0 * PI * self.n as f64
    }

    pub fn support_bound(&self) -> f64 {
        self.density.support_bound
    }

    pub fn search_bound(&self) -> f64 {
        self.support_bound() + 1.0
    }

    /// Density breakpoints inside `[-M, M]`, ascending; the first and last are
    /// the ends of the support.
    pub fn lambda_breaks(&self) -> Vec<f64> {
        let m = self.support_bound();
        let mut b: Vec<f64> = self.density.breakpoints().into_iter().map(|x| x.clamp(-m, m)).collect();
        b.sort_by(|a, c| a.total_cmp(c));
        b.dedup();
        b
    }

    fn potential(&self, lambda: f64) -> Combined<'_> {
        Combined { base: &self.g, extra: &self.f, lambda }
    }

    /// `φ₀(-1, α, λ)`.
    pub fn phase_plus(&self, alpha: f64, lambda: f64) -> Result<f64> {
        prufer::phase_end(&self.potential(lambda), self.e, 0.0, -1.0, alpha, &self.opts)
    }

    /// `φ₋₁(0, β, λ)`.
    pub fn phase_minus(&self, beta: f64, lambda: f64) -> Result<f64> {
        prufer::phase_end(&self.potential(lambda), self.e, -1.0, 0.0, beta, &self.opts)
    }

    fn amplitude(&self, from: f64, to: f64, theta: f64, lambda: f64) -> Result<CellAmplitude> {
        let out = prufer::prufer_weighted(
            &self.potential(lambda),
            self.e,
            from,
            to,
            theta,
            &self.f,
            &[],
            &self.opts,
            Steps::Adaptive,
        )?;
        Ok(CellAmplitude { phase_end: out.end[0], ln_r_end: out.end[1], f_mass: out.end[2].abs() })
    }

    /// `u₀(·, α, λ)` integrated from 0 to -1.
    pub fn amplitude_plus(&self, alpha: f64, lambda: f64) -> Result<CellAmplitude> {
        self.amplitude(0.0, -1.0, alpha, lambda)
    }

    /// `u₋₁(·, β, λ)` integrated from -1 to 0.
    pub fn amplitude_minus(&self, beta: f64, lambda: f64) -> Result<CellAmplitude> {
        self.amplitude(-1.0, 0.0, beta, lambda)
    }

    /// The coupling `λ ∈ [-bound, bound]` with `φ₀(-1, α, λ) ≡ β (mod 2πN)`.
    pub fn solve_lambda(&self, beta: PhasePoint, alpha: PhasePoint, bound: f64, tol: f64) -> Result<LambdaSolution> {
        let period = self.period();
        let a = alpha.value;
        let lo = self.phase_plus(a, -bound)?;
        let hi = self.phase_plus(a, bound)?;
        let m_min = ((lo - beta.value) / period).ceil() as i64;
        let m_max = ((hi - beta.value) / period).floor() as i64;
        if m_max < m_min {
            let below = (lo - beta.value).rem_euclid(period);
            let above = (beta.value - hi).rem_euclid(period);
            return Ok(LambdaSolution { lambda: f64::NAN, residual: below.min(above), exists: false });
        }
        let mut sols = Vec::new();
        for k in m_min..=m_max {
            let target = beta.value + k as f64 * period;
            let f = |l: f64| Ok(self.phase_plus(a, l)? - target);
            let lambda = roots::brent(f, -bound, bound, lo - target, hi - target, tol, 200)?;
            let residual = (self.phase_plus(a, lambda)? - target).abs();
            sols.push(LambdaSolution { lambda, residual, exists: true });
        }
        let m = self.support_bound();
        let admissible: Vec<_> = sols.iter().filter(|s| s.lambda.abs() <= m).copied().collect();
        match admissible.len() {
            0 => Ok(*sols.iter().min_by(|x, y| x.lambda.abs().total_cmp(&y.lambda.abs())).expect("non-empty")),
            1 => Ok(admissible[0]),
            _ => Err(Error::BranchAmbiguity { width: hi - lo, period }),
        }
    }

    pub fn lambda(&self, beta: f64, alpha: f64) -> Result<LambdaSolution> {
        self.solve_lambda(PhasePoint::new(beta, self.n), PhasePoint::new(alpha, self.n), self.search_bound(), 1e-13)
    }

    /// Both cell solutions at `λ(β, α)`.
    pub fn cell_solutions(&self, beta: f64, alpha: f64) -> Result<CellSolutionPair> {
        let sol = self.lambda(beta, alpha)?;
        if !sol.exists {
            return Err(Error::NotFound);
        }
        let lambda = sol.lambda;
        let tol = self.opts.rtol;
        let q = self.potential(lambda);
        let u_plus = prufer::integrate_prufer(&q, self.e, 0.0, -1.0, alpha, tol)?;
        let u_minus = prufer::integrate_prufer(&q, self.e, -1.0, 0.0, beta, tol)?;
        let plus = self.amplitude_plus(alpha, lambda)?;
        let minus = self.amplitude_minus(beta, lambda)?;
        Ok(CellSolutionPair {
            lambda,
            u_plus,
            u_minus,
            r_plus_end: plus.ln_r_end.exp(),
            r_minus_end: minus.ln_r_end.exp(),
            f_weighted_mass_plus: plus.f_mass,
            f_weighted_mass_minus: minus.f_mass,
        })
    }

    /// All kernels at `(β, α)`; zero where `λ(β, α)` does not exist.
    pub fn kernel_values(&self, beta: f64, alpha: f64) -> Result<KernelValues> {
        let sol = self.lambda(beta, alpha)?;
        if !sol.exists {
            return Ok(KernelValues::default());
        }
        let r = self.density.pdf(sol.lambda);
        if r == 0.0 {
            return Ok(KernelValues::default());
        }
        let plus = self.amplitude_plus(alpha, sol.lambda)?;
        let minus = self.amplitude_minus(beta, sol.lambda)?;
        Ok(kernel_from(&plus, &minus, r))
    }

    pub fn kernel_t1(&self, beta: f64, alpha: f64) -> Result<f64> {
        Ok(self.kernel_values(beta, alpha)?.t1)
    }

    pub fn kernel_k1_k2(&self, beta: f64, alpha: f64) -> Result<(f64, f64)> {
        let v = self.kernel_values(beta, alpha)?;
        Ok((v.k1, v.k2))
    }

    /// `(Ψ_j(θ), Φ(θ))`.
    pub fn boundary_functions(&self, theta: f64, j: u32) -> Result<(f64, f64)> {
        let psi = self.kernel_values(theta, j as f64 * PI)?.t0;
        let phi = self.kernel_values(0.0, theta)?.t0_tilde;
        Ok((psi, phi))
    }

    /// `ln R₋₁(0, β, λ)` for each `λ`.
    pub fn large_coupling_amplitude(&self, beta: f64, lambdas: &[f64]) -> Result<Vec<f64>> {
        lambdas
            .iter()
            .map(|&l| {
                let q = self.potential(l);
                let out = prufer::prufer_solve(&q, self.e, -1.0, 0.0, beta, &[], &self.opts, Steps::Adaptive)?;
                Ok(out.end[1])
            })
            .collect()
    }
}

fn kernel_from(plus: &CellAmplitude, minus: &CellAmplitude, r: f64) -> KernelValues {
    let r_plus = plus.ln_r_end.exp();
    let k1 = r / plus.f_mass;
    KernelValues {
        t0: r_plus * r_plus * k1,
        t1: r_plus * k1,
        k1,
        k2: r_plus * r_plus * k1,
        t0_tilde: (2.0 * minus.ln_r_end).exp() * r / minus.f_mass,
    }
}

pub fn solve_lambda(problem: &CellProblem, beta: PhasePoint, alpha: PhasePoint, bound: f64, tol: f64) -> Result<LambdaSolution> {
    problem.solve_lambda(beta, alpha, bound, tol)
}

pub fn cell_solutions(problem: &CellProblem, beta: f64, alpha: f64) -> Result<CellSolutionPair> {
    problem.cell_solutions(beta, alpha)
}

pub fn kernel_t1(problem: &CellProblem, beta: f64, alpha: f64) -> Result<f64> {
    problem.kernel_t1(beta, alpha)
}

pub fn kernel_k1_k2(problem: &CellProblem, beta: f64, alpha: f64) -> Result<(f64, f64)> {
    problem.kernel_k1_k2(beta, alpha)
}

pub fn boundary_functions_psi_phi(problem: &CellProblem, theta: f64, j: u32) -> Result<(f64, f64)> {
    problem.boundary_functions(theta, j)
}

pub fn large_coupling_amplitude(problem: &CellProblem, beta: f64, lambdas: &[f64]) -> Result<Vec<f64>> {
    problem.large_coupling_amplitude(beta, lambdas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    fn reference(e: f64) -> CellProblem {
        CellProblem::for_cell(&ModelSpec::reference(), 0, e)
    }

    #[test]
    fn free_flow_inversion() {
        let p = reference(0.0);
        let s = p.solve_lambda(PhasePoint::new(0.0, 2), PhasePoint::new(FRAC_PI_4, 2), 2.0, 1e-13).unwrap();
        assert!(s.exists);
        assert!(s.lambda.abs() < 1e-9, "{s:?}");
    }

    #[test]
    fn round_trip_inversion() {
        let p = reference(0.7);
        for alpha in [0.1, 1.3, 4.0, 9.5] {
            let beta = p.phase_plus(alpha, 1.0).unwrap();
            let s = p.lambda(beta, alpha).unwrap();
            assert!((s.lambda - 1.0).abs() < 1e-8, "alpha={alpha} {s:?}");
        }
    }

    #[test]
    fn unreachable_phase_has_no_solution() {
        let p = reference(0.0);
        let a = 1.0;
        let lo = p.phase_plus(a, -2.0).unwrap();
        let s = p.solve_lambda(PhasePoint::new(lo - 0.5, 2), PhasePoint::new(a, 2), 2.0, 1e-13).unwrap();
        assert!(!s.exists && s.residual > 0.4);
    }

    #[test]
    fn amplitude_reciprocity_and_scaling() {
        let p = reference(1.1);
        let alpha = 2.2;
        let beta = p.phase_plus(alpha, 0.4).unwrap();
        let c = p.cell_solutions(beta, alpha).unwrap();
        assert!((c.r_plus_end * c.r_minus_end - 1.0).abs() < 1e-8);
        let up = c.u_plus.u();
        let um = c.u_minus.u();
        let r2 = c.r_plus_end * c.r_plus_end;
        for (a, b) in up.iter().zip(&um) {
            assert!((a * a - r2 * b * b).abs() < 1e-8);
        }
        assert!((c.f_weighted_mass_minus * c.r_plus_end.powi(2) - c.f_weighted_mass_plus).abs() < 1e-8);
    }

    #[test]
    fn kernel_identities_pointwise() {
        let p = reference(0.5);
        let alpha = 0.9;
        let beta = p.phase_plus(alpha, 0.3).unwrap();
        let v = p.kernel_values(beta, alpha).unwrap();
        assert!(v.t1 > 0.0);
        assert!((v.t1 - (v.k1 * v.k2).sqrt()).abs() <= 1e-10 * v.t1);
        // Kernel off the support of r vanishes.
        let beta_out = p.phase_plus(alpha, 1.5).unwrap();
        assert_eq!(p.kernel_t1(beta_out, alpha).unwrap(), 0.0);
        // π-shift periodicity.
        let shifted = p.kernel_t1(beta + PI, alpha + PI).unwrap();
        assert!((shifted - v.t1).abs() < 1e-9 * v.t1);
    }

    #[test]
    fn large_coupling_free_case() {
        let p = reference(0.0);
        let v = p.large_coupling_amplitude(0.0, &[0.0]).unwrap();
        assert!((v[0] - 0.5 * 2f64.ln()).abs() < 1e-9);
    }
}

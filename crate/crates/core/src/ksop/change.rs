//! The map `ω ↦ (E_k, θ_{-L+1}, …, θ_{L-1})` and its inverse by cell-wise
//! λ-inversion.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::CellProblem;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::ode::{OdeOptions, Steps};
use crate::prufer;
use crate::spectral;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCoordinates {
    pub l: usize,
    pub k: usize,
    pub energy: f64,
    /// `k mod 2N`; the right-end phase is `jπ` on `𝕋_N`.
    pub branch_j: u32,
    /// `φ_{-L}(i)` mod `2πN` for `i = -L+1, …, L-1`.
    pub thetas: Vec<f64>,
}

/// Phase coordinates of the `k`-th eigenvalue of `H_ω` on `[-L, L]`.
pub fn phase_coordinates(spec: &ModelSpec, omega: &[f64], l: usize, k: usize, tol: f64) -> Result<PhaseCoordinates> {
    let energy = spectral::eigenvalue_by_index(spec, omega, l, k, tol)?;
    let lf = l as f64;
    let sites: Vec<f64> = (1..2 * l).map(|i| -lf + i as f64).collect();
    let q = spec.full_potential(omega, 1 - l as i64);
    let out = prufer::prufer_solve(&q, energy, -lf, lf, 0.0, &sites, &OdeOptions::with_tol(1e-12), Steps::Adaptive)?;
    let period = spec.torus_length();
    Ok(PhaseCoordinates {
        l,
        k,
        energy,
        branch_j: (k % (2 * spec.phase_bound_n as usize)) as u32,
        thetas: out.samples.iter().map(|s| s[0].rem_euclid(period)).collect(),
    })
}

/// Recovers `ω_{-L+1}, …, ω_L`: cell `i` carries the phase from `θ_{i-1}` to
/// `θ_i`, with `θ_{-L} = 0` and `θ_L = jπ`.
pub fn reconstruct_couplings(spec: &ModelSpec, c: &PhaseCoordinates) -> Result<Vec<f64>> {
    let l = c.l as i64;
    if c.thetas.len() + 1 != 2 * c.l {
        return Err(Error::InvalidInput(format!("expected {} phases, got {}", 2 * c.l - 1, c.thetas.len())));
    }
    let mut ends = Vec::with_capacity(2 * c.l + 1);
    ends.push(0.0);
    ends.extend_from_slice(&c.thetas);
    ends.push(c.branch_j as f64 * PI);
    ends.windows(2)
        .zip(1 - l..=l)
        .map(|(w, i)| {
            let p = CellProblem::for_cell(spec, i, c.energy).with_tol(1e-12);
            let sol = p.lambda(w[0], w[1])?;
            if !sol.exists {
                return Err(Error::NotFound);
            }
            Ok(sol.lambda)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sample_couplings;

    #[test]
    fn free_round_trip() {
        let spec = ModelSpec::reference();
        let omega = sample_couplings(&spec.coupling, 2, 3).unwrap();
        let c = phase_coordinates(&spec, &omega, 1, 1, 1e-14).unwrap();
        let back = reconstruct_couplings(&spec, &c).unwrap();
        for (a, b) in omega.iter().zip(&back) {
            assert!((a - b).abs() < 1e-6, "{omega:?} vs {back:?}");
        }
    }
}

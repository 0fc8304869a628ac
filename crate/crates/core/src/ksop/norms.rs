//! Operator norms of discretized kernels and the `L_j` block decomposition.

use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix, DVector};
use serde::Serialize;

use super::assembly::{assemble_plus, DiscreteKernel, Domain};
use super::CellProblem;
use crate::error::{Error, Result};
use crate::model::Profile;

/// `‖K‖_{1,1}`: the largest weighted absolute column sum.
pub fn norm_1_to_1(k: &DiscreteKernel) -> f64 {
    (0..k.size())
        .map(|j| (0..k.size()).map(|i| k.weights[i] * k.matrix[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn symmetrized(k: &DiscreteKernel) -> DMatrix<f64> {
    let s: Vec<f64> = k.weights.iter().map(|w| w.sqrt()).collect();
    DMatrix::from_fn(k.size(), k.size(), |i, j| s[i] * k.matrix[(i, j)] * s[j])
}

/// `‖K‖_{2,2}` of the quadrature operator, from the singular values of
/// `W^{1/2} K W^{1/2}`.
pub fn norm_2_to_2(k: &DiscreteKernel) -> f64 {
    symmetrized(k).singular_values().iter().copied().fold(0.0, f64::max)
}

/// Same norm by power iteration on `AᵀA`.
pub fn norm_2_to_2_power(k: &DiscreteKernel, rel_tol: f64, max_iter: usize) -> f64 {
    let a = symmetrized(k);
    let n = a.ncols();
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.01 * ((i * 7919) % 101) as f64);
    v /= v.norm();
    let mut sigma = 0.0;
    for _ in 0..max_iter {
        let w = &a * &v;
        let mut z = a.transpose() * &w;
        let lam = z.norm();
        if lam == 0.0 {
            return 0.0;
        }
        z /= lam;
        let next = lam.sqrt();
        let done = (next - sigma).abs() <= rel_tol * next;
        sigma = next;
        v = z;
        if done {
            break;
        }
    }
    sigma
}

/// One `L_j` block on `(0, π)`.
#[derive(Debug, Clone)]
pub struct BlockKernel {
    pub j: usize,
    pub grid: Vec<f64>,
    pub weights: Vec<f64>,
    pub matrix: DMatrix<Complex<f64>>,
}

impl BlockKernel {
    pub fn norm_2_to_2(&self) -> f64 {
        let s: Vec<f64> = self.weights.iter().map(|w| w.sqrt()).collect();
        let n = self.grid.len();
        let a = DMatrix::from_fn(n, n, |i, k| self.matrix[(i, k)] * (s[i] * s[k]));
        a.singular_values().iter().copied().fold(0.0, f64::max)
    }
}

/// `L_j(β, α) = Σ_n T(β, α + nπ) e^{iπjn/N}` for `j = 0, …, 2N-1`.
pub fn block_decompose(k: &DiscreteKernel, n: u32) -> Result<Vec<BlockKernel>> {
    let m = k.size();
    let blocks = 2 * n as usize;
    if !matches!(k.domain, Domain::Torus { n: kn } if kn == n) {
        return Err(Error::InvalidInput("block decomposition needs a kernel on the matching torus".into()));
    }
    if m % blocks != 0 {
        return Err(Error::InvalidInput(format!("grid size {m} is not divisible by 2N = {blocks}")));
    }
    let p = m / blocks;
    Ok((0..blocks)
        .map(|j| {
            let matrix = DMatrix::from_fn(p, p, |b, a| {
                (0..blocks).fold(Complex::new(0.0, 0.0), |acc, s| {
                    let ang = PI * (j * s) as f64 / n as f64;
                    acc + Complex::from_polar(k.matrix[(b, a + s * p)], ang)
                })
            });
            BlockKernel { j, grid: k.grid[..p].to_vec(), weights: k.weights[..p].to_vec(), matrix }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContinuityPoint {
    pub epsilon: f64,
    pub norm: f64,
    pub difference: f64,
}

/// `|‖T₁(g + εp)‖ - ‖T₁(g)‖|` over `epsilons`.
pub fn norm_continuity_probe(
    p: &CellProblem,
    perturbation: &Profile,
    epsilons: &[f64],
    m: usize,
) -> Result<Vec<ContinuityPoint>> {
    let base = norm_2_to_2(&assemble_plus(p, m)?.t1);
    epsilons
        .iter()
        .map(|&eps| {
            let norm = if eps == 0.0 {
                base
            } else {
                let mut q = p.clone();
                q.g = p.g.plus(perturbation.scaled(eps));
                norm_2_to_2(&assemble_plus(&q, m)?.t1)
            };
            Ok(ContinuityPoint { epsilon: eps, norm, difference: (norm - base).abs() })
        })
        .collect()
}

/// Largest entrywise difference between `T₁(g, E)` and `T₁(g - E, 0)`.
pub fn absorption_difference(p: &CellProblem, m: usize) -> Result<f64> {
    let a = assemble_plus(p, m)?.t1;
    let b = assemble_plus(&p.energy_absorbed(), m)?.t1;
    Ok((&a.matrix - &b.matrix).amax())
}

//! Discretization of the cell kernels on a uniform grid of `𝕋_N`.
//!
//! Matrix entries are cell averages `h⁻² ∫∫_{cell_i × cell_j} K(β, α)`. For a
//! fixed outer phase the kernel is smooth in the inner phase except across the
//! curves where `λ` hits a breakpoint of `r`; the inner integral is split at
//! those curves and at cell edges. The outer integral is split where a curve
//! crosses a cell edge.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::CellProblem;
use crate::error::{Error, Result};
use crate::quad::mapped_rule;
use crate::roots;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    Torus { n: u32 },
    Segment { lo: f64, hi: f64 },
}

impl Domain {
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Domain::Torus { n } => (0.0, 2.0 * PI * n as f64),
            Domain::Segment { lo, hi } => (lo, hi),
        }
    }

    pub fn length(&self) -> f64 {
        let (a, b) = self.bounds();
        b - a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    T0,
    T0Tilde,
    T1,
    K1,
    K2,
}

/// Nyström image of an integral operator: `(K F)(x_i) ≈ Σ_j matrix[i, j] w_j F(x_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteKernel {
    pub grid: Vec<f64>,
    pub weights: Vec<f64>,
    /// Rows index the output variable, columns the input variable.
    pub matrix: DMatrix<f64>,
    pub domain: Domain,
}

impl DiscreteKernel {
    pub fn uniform(domain: Domain, matrix: DMatrix<f64>) -> Self {
        let m = matrix.ncols();
        let (a, b) = domain.bounds();
        let h = (b - a) / m as f64;
        Self { grid: (0..m).map(|i| a + (i as f64 + 0.5) * h).collect(), weights: vec![h; m], matrix, domain }
    }

    pub fn size(&self) -> usize {
        self.grid.len()
    }

    /// `(K F)` at the nodes.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let wf: Vec<f64> = f.iter().zip(&self.weights).map(|(a, w)| a * w).collect();
        let v = &self.matrix * nalgebra::DVector::from_vec(wf);
        v.iter().copied().collect()
    }

    /// Weighted `L²` inner product of two node vectors.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(&self.weights).map(|((x, y), w)| x * y * w).sum()
    }
}

/// Midpoint-rule discretization of an arbitrary kernel.
pub fn discretize<K>(kernel: K, domain: Domain, m: usize) -> Result<DiscreteKernel>
where
    K: Fn(f64, f64) -> f64 + Sync,
{
    if m < 16 {
        return Err(Error::InvalidInput(format!("need at least 16 nodes, got {m}")));
    }
    let (a, b) = domain.bounds();
    let h = (b - a) / m as f64;
    let nodes: Vec<f64> = (0..m).map(|i| a + (i as f64 + 0.5) * h).collect();
    let cols: Vec<Vec<f64>> = nodes.par_iter().map(|&x| nodes.iter().map(|&y| kernel(y, x)).collect()).collect();
    let matrix = DMatrix::from_fn(m, m, |i, j| cols[j][i]);
    Ok(DiscreteKernel { grid: nodes, weights: vec![h; m], matrix, domain })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    /// Outer `α`, inner `β = φ₀(-1, α, λ)` (increasing in `λ`).
    Plus,
    /// Outer `β`, inner `α = φ₋₁(0, β, λ)` (decreasing in `λ`).
    Minus,
}

struct Sweep<'a> {
    p: &'a CellProblem,
    side: Side,
    m: usize,
    h: f64,
    period: f64,
    lambdas: Vec<f64>,
}

type Contribution = (usize, [f64; 3]);

impl<'a> Sweep<'a> {
    fn new(p: &'a CellProblem, side: Side, m: usize) -> Result<Self> {
        if m < 16 {
            return Err(Error::InvalidInput(format!("need at least 16 nodes, got {m}")));
        }
        let lambdas = p.lambda_breaks();
        if lambdas.len() < 2 {
            return Err(Error::InvalidInput("coupling density has degenerate support".into()));
        }
        let period = p.period();
        Ok(Self { p, side, m, h: period / m as f64, period, lambdas })
    }

    fn inner_phase(&self, o: f64, l: f64) -> Result<f64> {
        match self.side {
            Side::Plus => self.p.phase_plus(o, l),
            Side::Minus => self.p.phase_minus(o, l),
        }
    }

    fn values(&self, o: f64, l: f64) -> Result<[f64; 3]> {
        let r = self.p.density.pdf(l);
        if r == 0.0 {
            return Ok([0.0; 3]);
        }
        Ok(match self.side {
            Side::Plus => {
                let a = self.p.amplitude_plus(o, l)?;
                let rp = a.ln_r_end.exp();
                let k1 = r / a.f_mass;
                [rp * rp * k1, rp * k1, k1]
            }
            Side::Minus => {
                let a = self.p.amplitude_minus(o, l)?;
                [(2.0 * a.ln_r_end).exp() * r / a.f_mass, 0.0, 0.0]
            }
        })
    }

    fn curves(&self, o: f64) -> Result<Vec<f64>> {
        self.lambdas.iter().map(|&l| self.inner_phase(o, l)).collect()
    }

    fn cell_of(&self, t: f64) -> usize {
        ((t / self.h).floor() as i64).rem_euclid(self.m as i64) as usize
    }

    /// Adds `scale · ∫ K(t, o) dt` over each inner cell accepted by `filter`.
    fn integrate_inner(
        &self,
        o: f64,
        curves: &[f64],
        filter: &dyn Fn(usize) -> bool,
        scale: f64,
        out: &mut Vec<Contribution>,
    ) -> Result<()> {
        let mut pts: Vec<(f64, f64)> = curves.iter().copied().zip(self.lambdas.iter().copied()).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let lo = pts[0].0;
        let hi = pts[pts.len() - 1].0;
        if hi - lo >= self.period {
            return Err(Error::BranchAmbiguity { width: hi - lo, period: self.period });
        }
        let mut cuts = vec![lo];
        let mut k = (lo / self.h).floor() + 1.0;
        while k * self.h < hi {
            cuts.push(k * self.h);
            k += 1.0;
        }
        cuts.extend(pts[1..pts.len() - 1].iter().map(|p| p.0));
        cuts.push(hi);
        cuts.sort_by(|a, b| a.total_cmp(b));
        cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-14);

        let mut seg = 0usize;
        for w in cuts.windows(2) {
            let (t0, t1) = (w[0], w[1]);
            if t1 - t0 <= 1e-14 {
                continue;
            }
            let mid = 0.5 * (t0 + t1);
            let cell = self.cell_of(mid);
            if !filter(cell) {
                continue;
            }
            while seg + 2 < pts.len() && pts[seg + 1].0 <= mid {
                seg += 1;
            }
            let (va, la) = pts[seg];
            let (vb, lb) = pts[seg + 1];
            let mut acc = [0.0; 3];
            for (t, wt) in mapped_rule(t0, t1, 3) {
                let lam = if t <= va {
                    la
                } else if t >= vb {
                    lb
                } else {
                    roots::brent(|l| Ok(self.inner_phase(o, l)? - t), la, lb, va - t, vb - t, 1e-13, 100)?
                };
                let v = self.values(o, lam)?;
                for s in 0..3 {
                    acc[s] += wt * v[s];
                }
            }
            out.push((cell, acc.map(|a| a * scale)));
        }
        Ok(())
    }

    fn column(&self, j: usize) -> Result<Vec<Contribution>> {
        let h = self.h;
        let (a0, a1) = (j as f64 * h, (j + 1) as f64 * h);
        let c0 = self.curves(a0)?;
        let c1 = self.curves(a1)?;
        let mut touched = Vec::new();
        for k in 0..c0.len() {
            let (x, y) = (c0[k].min(c1[k]), c0[k].max(c1[k]));
            let mut n = (x / h).floor();
            while n <= (y / h).floor() {
                touched.push(((n as i64).rem_euclid(self.m as i64)) as usize);
                n += 1.0;
            }
        }
        touched.sort_unstable();
        touched.dedup();
        let in_touched = |c: usize| touched.binary_search(&c).is_ok();
        let scale = 1.0 / (h * h);

        let mut out = Vec::new();
        for (o, w) in mapped_rule(a0, a1, 2) {
            let cur = self.curves(o)?;
            self.integrate_inner(o, &cur, &|c| !in_touched(c), w * scale, &mut out)?;
        }

        let mut splits = vec![a0, a1];
        for k in 0..c0.len() {
            let (x, y) = (c0[k], c1[k]);
            let mut n = (x / h).floor() + 1.0;
            while n * h < y {
                let e = n * h;
                let lk = self.lambdas[k];
                let o = roots::brent(|o| Ok(self.inner_phase(o, lk)? - e), a0, a1, x - e, y - e, 1e-13, 100)?;
                splits.push(o);
                n += 1.0;
            }
        }
        splits.sort_by(|a, b| a.total_cmp(b));
        splits.dedup_by(|a, b| (*a - *b).abs() <= 1e-14);
        for s in splits.windows(2) {
            for (o, w) in mapped_rule(s[0], s[1], 3) {
                let cur = self.curves(o)?;
                self.integrate_inner(o, &cur, &in_touched, w * scale, &mut out)?;
            }
        }
        Ok(out)
    }

    fn assemble(&self) -> Result<[DMatrix<f64>; 3]> {
        let cols: Vec<Vec<Contribution>> = (0..self.m).into_par_iter().map(|j| self.column(j)).collect::<Result<_>>()?;
        let mut mats = [DMatrix::zeros(self.m, self.m), DMatrix::zeros(self.m, self.m), DMatrix::zeros(self.m, self.m)];
        for (j, col) in cols.iter().enumerate() {
            for (i, v) in col {
                for s in 0..3 {
                    mats[s][(*i, j)] += v[s];
                }
            }
        }
        Ok(mats)
    }

    /// Cell averages of the inner kernel at a single outer phase.
    fn vector(&self, o: f64, component: usize) -> Result<Vec<f64>> {
        let cur = self.curves(o)?;
        let mut out = Vec::new();
        self.integrate_inner(o, &cur, &|_| true, 1.0 / self.h, &mut out)?;
        let mut v = vec![0.0; self.m];
        for (i, c) in out {
            v[i] += c[component];
        }
        Ok(v)
    }
}

/// The plus-side kernels of one cell.
#[derive(Debug, Clone)]
pub struct KernelMatrices {
    pub t0: DiscreteKernel,
    pub t1: DiscreteKernel,
    pub k1: DiscreteKernel,
}

/// `T₀` (= `K₂`), `T₁` and `K₁` as `(β, α)` matrices.
pub fn assemble_plus(p: &CellProblem, m: usize) -> Result<KernelMatrices> {
    let [t0, t1, k1] = Sweep::new(p, Side::Plus, m)?.assemble()?;
    let domain = Domain::Torus { n: p.n };
    Ok(KernelMatrices {
        t0: DiscreteKernel::uniform(domain, t0),
        t1: DiscreteKernel::uniform(domain, t1),
        k1: DiscreteKernel::uniform(domain, k1),
    })
}

/// `T̃₀` as an `(α, β)` matrix, built from `u₋₁` alone.
pub fn assemble_minus(p: &CellProblem, m: usize) -> Result<DiscreteKernel> {
    let [t, _, _] = Sweep::new(p, Side::Minus, m)?.assemble()?;
    Ok(DiscreteKernel::uniform(Domain::Torus { n: p.n }, t))
}

/// Cell averages of `Ψ_j` and `Φ`.
pub fn boundary_vectors(p: &CellProblem, j: u32, m: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let psi = Sweep::new(p, Side::Plus, m)?.vector(j as f64 * PI, 0)?;
    let phi = Sweep::new(p, Side::Minus, m)?.vector(0.0, 0)?;
    Ok((psi, phi))
}

/// Cell averages of `θ ↦ T₁(θ, jπ)`, the last-cell vector when the far
/// site of the correlator is the box edge.
pub fn boundary_vector_t1(p: &CellProblem, j: u32, m: usize) -> Result<Vec<f64>> {
    Sweep::new(p, Side::Plus, m)?.vector(j as f64 * PI, 1)
}

/// Kernel matrices keyed by cell data, energy, grid size and integrator
/// tolerance.
#[derive(Default)]
pub struct KernelCache {
    map: Mutex<HashMap<String, Arc<DiscreteKernel>>>,
}

impl KernelCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn key(p: &CellProblem, kind: KernelKind, m: usize) -> String {
        format!(
            "{}|{}|{:?}|{:e}|{}|{}|{:e}|{:?}",
            serde_json::to_string(&p.g).unwrap_or_default(),
            serde_json::to_string(&p.f).unwrap_or_default(),
            p.density.config,
            p.e,
            m,
            p.n,
            p.opts.rtol,
            kind
        )
    }

    pub fn len(&self) -> usize {
        self.map.lock().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kernel(&self, p: &CellProblem, kind: KernelKind, m: usize) -> Result<Arc<DiscreteKernel>> {
        let key = Self::key(p, kind, m);
        if let Some(k) = self.map.lock().expect("cache poisoned").get(&key) {
            return Ok(k.clone());
        }
        let mut fresh: Vec<(KernelKind, DiscreteKernel)> = Vec::new();
        match kind {
            KernelKind::T0Tilde => fresh.push((KernelKind::T0Tilde, assemble_minus(p, m)?)),
            _ => {
                let ks = assemble_plus(p, m)?;
                fresh.push((KernelKind::K2, ks.t0.clone()));
                fresh.push((KernelKind::T0, ks.t0));
                fresh.push((KernelKind::T1, ks.t1));
                fresh.push((KernelKind::K1, ks.k1));
            }
        }
        let mut map = self.map.lock().expect("cache poisoned");
        let mut found = None;
        for (k, v) in fresh {
            let arc = map.entry(Self::key(p, k, m)).or_insert_with(|| Arc::new(v)).clone();
            if k == kind {
                found = Some(arc);
            }
        }
        Ok(found.expect("requested kind assembled"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;

    #[test]
    fn constant_kernel_row_sums() {
        let k = discretize(|_, _| 1.0, Domain::Segment { lo: 0.0, hi: PI }, 32).unwrap();
        let ones = vec![1.0; 32];
        for v in k.apply(&ones) {
            assert!((v - PI).abs() < 1e-13);
        }
        assert!(discretize(|_, _| 1.0, Domain::Segment { lo: 0.0, hi: PI }, 8).is_err());
    }

    #[test]
    fn cell_averages_match_pointwise_kernel() {
        let p = CellProblem::for_cell(&ModelSpec::reference(), 0, 0.5);
        let ks = assemble_plus(&p, 64).unwrap();
        let h = ks.t1.weights[0];
        let j = 10;
        let (a0, a1) = (j as f64 * h, (j + 1) as f64 * h);
        let col = ks.t1.matrix.column(j);
        let peak = col.amax();
        let mut checked = 0;
        for i in 0..64 {
            if col[i] == 0.0 {
                continue;
            }
            // Integrate the pointwise kernel over the part of the cell where
            // λ lies in the support, clipping at the jump curves.
            let (b0, b1) = (i as f64 * h, (i + 1) as f64 * h);
            let mut s = 0.0;
            for (alpha, wa) in mapped_rule(a0, a1, 160) {
                let lo = p.phase_plus(alpha, 0.0).unwrap();
                let hi = p.phase_plus(alpha, 1.0).unwrap();
                let (x, y) = (lo.max(b0), hi.min(b1));
                if y > x {
                    for (beta, wb) in mapped_rule(x, y, 12) {
                        s += wa * wb * p.kernel_t1(beta, alpha).unwrap();
                    }
                }
            }
            s /= h * h;
            assert!((s - col[i]).abs() < 1e-5 * peak, "row {i}: {s} vs {}", col[i]);
            checked += 1;
        }
        assert!(checked >= 3);
    }
}

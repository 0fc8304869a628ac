//! Embedded Dormand–Prince 5(4) integrator with dense output.
//!
//! The integrator never steps across a declared breakpoint: the interval is
//! split into pieces and each piece is integrated from a fresh first stage.
//! Right-hand sides are always evaluated strictly inside the current piece,
//! so one-sided limits of piecewise potentials are picked up correctly.
//!
//! An accepted step sequence can be recorded and replayed. Replaying the same
//! mesh with perturbed parameters makes the discrete flow a smooth function of
//! those parameters, which is what finite-difference checks need.

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub atol: f64,
    pub rtol: f64,
    /// Upper bound on |h|.
    pub max_step: f64,
    pub max_steps: usize,
    pub record_mesh: bool,
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { atol: tol, rtol: tol, ..Self::default() }
    }
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { atol: 1e-10, rtol: 1e-10, max_step: 0.1, max_steps: 2_000_000, record_mesh: false }
    }
}

/// How steps are chosen.
#[derive(Debug, Clone, Copy)]
pub enum Steps<'a> {
    Adaptive,
    /// Re-run a mesh recorded by an earlier adaptive solve over the same
    /// interval with the same breakpoints.
    Replay(&'a [f64]),
}

#[derive(Debug, Clone)]
pub struct OdeOutput<const D: usize> {
    pub end: [f64; D],
    /// One entry per requested sample point, in request order.
    pub samples: Vec<[f64; D]>,
    /// Accepted mesh including the endpoints and every breakpoint; empty
    /// unless recording was requested.
    pub mesh: Vec<f64>,
    pub rhs_evals: usize,
}

#[inline]
fn axpy<const D: usize>(y: &[f64; D], h: f64, terms: &[(f64, &[f64; D])]) -> [f64; D] {
    let mut out = *y;
    for (c, k) in terms {
        if *c == 0.0 {
            continue;
        }
        for i in 0..D {
            out[i] += h * c * k[i];
        }
    }
    out
}

/// Sorted interior breakpoints of `[from, to]` in the direction of integration,
/// followed by `to`.
fn piece_ends(from: f64, to: f64, breakpoints: &[f64]) -> Vec<f64> {
    let (lo, hi) = if from < to { (from, to) } else { (to, from) };
    let mut ends: Vec<f64> = breakpoints.iter().copied().filter(|&b| b > lo && b < hi).collect();
    ends.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ends.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * (1.0 + a.abs()));
    if from > to {
        ends.reverse();
    }
    ends.push(to);
    ends
}

struct Stepper<'f, const D: usize, F> {
    rhs: &'f mut F,
    evals: usize,
}

struct StepResult<const D: usize> {
    y1: [f64; D],
    k7: [f64; D],
    err: [f64; D],
    k: [[f64; D]; 6],
}

impl<'f, const D: usize, F: FnMut(f64, &[f64; D]) -> [f64; D]> Stepper<'f, D, F> {
    #[inline]
    fn eval(&mut self, x: f64, y: &[f64; D], lo: f64, hi: f64) -> [f64; D] {
        self.evals += 1;
        let delta = (1e-12 * (1.0 + lo.abs().max(hi.abs()))).min(0.25 * (hi - lo));
        (self.rhs)(x.clamp(lo + delta, hi - delta), y)
    }

    fn step(&mut self, x: f64, y: &[f64; D], k1: &[f64; D], h: f64, lo: f64, hi: f64) -> StepResult<D> {
        let k2 = self.eval(x + C2 * h, &axpy(y, h, &[(A21, k1)]), lo, hi);
        let k3 = self.eval(x + C3 * h, &axpy(y, h, &[(A31, k1), (A32, &k2)]), lo, hi);
        let k4 = self.eval(x + C4 * h, &axpy(y, h, &[(A41, k1), (A42, &k2), (A43, &k3)]), lo, hi);
        let k5 = self.eval(
            x + C5 * h,
            &axpy(y, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
            lo,
            hi,
        );
        let k6 = self.eval(
            x + h,
            &axpy(y, h, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
            lo,
            hi,
        );
        let y1 = axpy(y, h, &[(A71, k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let k7 = self.eval(x + h, &y1, lo, hi);
        let mut err = [0.0; D];
        for i in 0..D {
            err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        StepResult { y1, k7, err, k: [*k1, k2, k3, k4, k5, k6] }
    }
}

fn dense<const D: usize>(y0: &[f64; D], s: &StepResult<D>, h: f64, theta: f64) -> [f64; D] {
    let t1 = 1.0 - theta;
    let k = &s.k;
    let mut out = [0.0; D];
    for i in 0..D {
        let ydiff = s.y1[i] - y0[i];
        let bspl = h * k[0][i] - ydiff;
        let r4 = ydiff - h * s.k7[i] - bspl;
        let r5 = h
            * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i] + D7 * s.k7[i]);
        out[i] = y0[i] + theta * (ydiff + t1 * (bspl + theta * (r4 + t1 * r5)));
    }
    out
}

fn error_norm<const D: usize>(y0: &[f64; D], s: &StepResult<D>, opts: &OdeOptions) -> f64 {
    let mut acc = 0.0;
    for i in 0..D {
        let sc = opts.atol + opts.rtol * y0[i].abs().max(s.y1[i].abs());
        let e = s.err[i] / sc;
        acc += e * e;
    }
    (acc / D as f64).sqrt()
}

/// Integrate `y' = rhs(x, y)` from `from` to `to` (either direction).
///
/// `sample_at` must be ordered in the direction of integration and lie inside
/// the interval; dense output supplies values there.
pub fn solve<const D: usize, F>(
    mut rhs: F,
    from: f64,
    to: f64,
    y0: [f64; D],
    breakpoints: &[f64],
    sample_at: &[f64],
    opts: &OdeOptions,
    steps: Steps<'_>,
) -> Result<OdeOutput<D>>
where
    F: FnMut(f64, &[f64; D]) -> [f64; D],
{
    if !(from.is_finite() && to.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite integration interval [{from}, {to}]")));
    }
    let dir = if to >= from { 1.0 } else { -1.0 };
    let (lo_all, hi_all) = if from < to { (from, to) } else { (to, from) };
    let slack = 1e-12 * (1.0 + lo_all.abs().max(hi_all.abs()));
    for w in sample_at.windows(2) {
        if dir * (w[1] - w[0]) < 0.0 {
            return Err(Error::InvalidInput("sample points are not ordered along the integration direction".into()));
        }
    }
    if let Some(bad) = sample_at.iter().find(|&&s| s < lo_all - slack || s > hi_all + slack) {
        return Err(Error::InvalidInput(format!("sample point {bad} outside [{lo_all}, {hi_all}]")));
    }

    let mut out = OdeOutput { end: y0, samples: Vec::with_capacity(sample_at.len()), mesh: Vec::new(), rhs_evals: 0 };
    let record = opts.record_mesh;
    if record {
        out.mesh.push(from);
    }
    let mut next_sample = 0usize;
    // Samples sitting exactly at the start.
    while next_sample < sample_at.len() && dir * (sample_at[next_sample] - from) <= 0.0 {
        out.samples.push(y0);
        next_sample += 1;
    }
    if from == to {
        while next_sample < sample_at.len() {
            out.samples.push(y0);
            next_sample += 1;
        }
        return Ok(out);
    }

    let ends = piece_ends(from, to, breakpoints);
    let mut stepper = Stepper { rhs: &mut rhs, evals: 0 };
    let mut x = from;
    let mut y = y0;
    let mut h_prev: Option<f64> = None;
    let mut total_steps = 0usize;
    let mut replay_pos = 1usize;

    for &end in &ends {
        let (lo, hi) = if x < end { (x, end) } else { (end, x) };
        if hi - lo <= 1e-15 * (1.0 + hi.abs()) {
            x = end;
            if record {
                out.mesh.push(end);
            }
            continue;
        }
        let mut k1 = stepper.eval(x, &y, lo, hi);

        match steps {
            Steps::Replay(mesh) => loop {
                let target = *mesh.get(replay_pos).ok_or_else(|| Error::Integration {
                    x,
                    reason: "replay mesh exhausted before the end of the interval".into(),
                })?;
                replay_pos += 1;
                if dir * (target - end) > slack {
                    return Err(Error::Integration { x, reason: "replay mesh does not match breakpoints".into() });
                }
                let target = if (target - end).abs() <= slack { end } else { target };
                let h = target - x;
                if h == 0.0 {
                    if target == end {
                        break;
                    }
                    continue;
                }
                let s = stepper.step(x, &y, &k1, h, lo, hi);
                emit_samples(&mut out, sample_at, &mut next_sample, x, &y, &s, h, target, dir);
                x = target;
                y = s.y1;
                k1 = s.k7;
                if record {
                    out.mesh.push(x);
                }
                if x == end {
                    break;
                }
            },
            Steps::Adaptive => {
                let remaining = (end - x).abs();
                let mut h = match h_prev {
                    Some(hp) => hp.abs(),
                    None => initial_step(&mut stepper, x, &y, &k1, dir, opts, lo, hi),
                }
                .min(opts.max_step)
                .min(remaining);
                let mut rejected_last = false;
                loop {
                    total_steps += 1;
                    if total_steps > opts.max_steps {
                        return Err(Error::Integration { x, reason: "maximum number of steps exceeded".into() });
                    }
                    let remaining = (end - x).abs();
                    let last = h >= remaining * (1.0 - 1e-12);
                    let hs = if last { dir * remaining } else { dir * h };
                    if h < 1e-14 * (1.0 + x.abs()) {
                        return Err(Error::Integration { x, reason: "step size underflow".into() });
                    }
                    let s = stepper.step(x, &y, &k1, hs, lo, hi);
                    let err = error_norm(&y, &s, opts);
                    if !err.is_finite() {
                        h *= 0.25;
                        rejected_last = true;
                        continue;
                    }
                    if err <= 1.0 {
                        let x_new = if last { end } else { x + hs };
                        emit_samples(&mut out, sample_at, &mut next_sample, x, &y, &s, hs, x_new, dir);
                        x = x_new;
                        y = s.y1;
                        k1 = s.k7;
                        if record {
                            out.mesh.push(x);
                        }
                        let mut fac = if err == 0.0 { 5.0 } else { 0.9 * err.powf(-0.2) };
                        fac = fac.clamp(0.2, 5.0);
                        if rejected_last {
                            fac = fac.min(1.0);
                        }
                        rejected_last = false;
                        h = (h * fac).min(opts.max_step);
                        h_prev = Some(h);
                        if last {
                            break;
                        }
                    } else {
                        let fac = (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
                        h *= fac;
                        rejected_last = true;
                    }
                }
            }
        }
        x = end;
    }
    while next_sample < sample_at.len() {
        out.samples.push(y);
        next_sample += 1;
    }
    out.end = y;
    out.rhs_evals = stepper.evals;
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn emit_samples<const D: usize>(
    out: &mut OdeOutput<D>,
    sample_at: &[f64],
    next: &mut usize,
    x0: f64,
    y0: &[f64; D],
    s: &StepResult<D>,
    h: f64,
    x1: f64,
    dir: f64,
) {
    while *next < sample_at.len() && dir * (sample_at[*next] - x1) <= 0.0 {
        let theta = ((sample_at[*next] - x0) / h).clamp(0.0, 1.0);
        let v = if theta >= 1.0 { s.y1 } else { dense(y0, s, h, theta) };
        out.samples.push(v);
        *next += 1;
    }
}

#[allow(clippy::too_many_arguments)]
fn initial_step<const D: usize, F: FnMut(f64, &[f64; D]) -> [f64; D]>(
    stepper: &mut Stepper<'_, D, F>,
    x: f64,
    y: &[f64; D],
    f0: &[f64; D],
    dir: f64,
    opts: &OdeOptions,
    lo: f64,
    hi: f64,
) -> f64 {
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for i in 0..D {
        let sc = opts.atol + opts.rtol * y[i].abs();
        d0 += (y[i] / sc).powi(2);
        d1 += (f0[i] / sc).powi(2);
    }
    d0 = (d0 / D as f64).sqrt();
    d1 = (d1 / D as f64).sqrt();
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(opts.max_step).min(hi - lo);
    let y1 = axpy(y, dir * h0, &[(1.0, f0)]);
    let f1 = stepper.eval(x + dir * h0, &y1, lo, hi);
    let mut d2 = 0.0;
    for i in 0..D {
        let sc = opts.atol + opts.rtol * y[i].abs();
        d2 += ((f1[i] - f0[i]) / sc).powi(2);
    }
    d2 = (d2 / D as f64).sqrt() / h0;
    let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
    (100.0 * h0).min(h1).max(1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_growth_matches_closed_form() {
        let out = solve(|_x, y: &[f64; 1]| [y[0]], 0.0, 2.0, [1.0], &[], &[], &OdeOptions::with_tol(1e-12), Steps::Adaptive)
            .unwrap();
        assert!((out.end[0] - 2f64.exp()).abs() < 1e-10);
    }

    #[test]
    fn backward_harmonic_oscillator_and_dense_samples() {
        // y = (sin x, cos x) integrated from pi back to 0.
        let pi = std::f64::consts::PI;
        let samples = [3.0, 2.0, 1.0, 0.5];
        let out = solve(
            |_x, y: &[f64; 2]| [y[1], -y[0]],
            pi,
            0.0,
            [0.0, -1.0],
            &[],
            &samples,
            &OdeOptions::with_tol(1e-11),
            Steps::Adaptive,
        )
        .unwrap();
        assert!((out.end[0]).abs() < 1e-9);
        assert!((out.end[1] - 1.0).abs() < 1e-9);
        for (s, v) in samples.iter().zip(&out.samples) {
            assert!((v[0] - s.sin()).abs() < 1e-8, "{s}: {v:?}");
        }
    }

    #[test]
    fn breakpoints_are_respected_for_step_potentials() {
        // y' = H(x - 0.3): exact answer 0.7 on [0, 1].
        let out = solve(
            |x, _y: &[f64; 1]| [if x > 0.3 { 1.0 } else { 0.0 }],
            0.0,
            1.0,
            [0.0],
            &[0.3],
            &[],
            &OdeOptions { record_mesh: true, ..OdeOptions::with_tol(1e-10) },
            Steps::Adaptive,
        )
        .unwrap();
        assert!((out.end[0] - 0.7).abs() < 1e-13);
        assert!(out.mesh.iter().any(|&m| (m - 0.3).abs() < 1e-15));
    }

    #[test]
    fn replayed_mesh_reproduces_adaptive_result() {
        let opts = OdeOptions { record_mesh: true, ..OdeOptions::with_tol(1e-9) };
        let f = |x: f64, y: &[f64; 1]| [-(1.0 + x) * y[0]];
        let a = solve(f, 0.0, 3.0, [1.0], &[1.5], &[], &opts, Steps::Adaptive).unwrap();
        let b = solve(f, 0.0, 3.0, [1.0], &[1.5], &[], &opts, Steps::Replay(&a.mesh)).unwrap();
        assert!((a.end[0] - b.end[0]).abs() <= 1e-14 * a.end[0].abs());
        assert_eq!(a.mesh.len(), b.mesh.len());
    }

    #[test]
    fn samples_outside_interval_are_rejected() {
        let r = solve(|_x, y: &[f64; 1]| [y[0]], 0.0, 1.0, [1.0], &[], &[2.0], &OdeOptions::default(), Steps::Adaptive);
        assert!(r.is_err());
    }
}

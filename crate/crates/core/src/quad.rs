//! Small quadrature and summation helpers.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gl_rule(n: usize) -> Arc<(Vec<f64>, Vec<f64>)> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<(Vec<f64>, Vec<f64>)>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("quadrature cache poisoned");
    guard.entry(n).or_insert_with(|| Arc::new(compute_gl(n))).clone()
}

fn compute_gl(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * p - pm) / (z * z - 1.0);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        if n == 1 {
            return (vec![0.0], vec![2.0]);
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

pub fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let rule = gl_rule(n);
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    rule.0.iter().zip(&rule.1).map(|(x, w)| w * f(c + h * x)).sum::<f64>() * h
}

/// Nodes and weights of an `n`-point rule mapped to `[a, b]`.
pub fn mapped_rule(a: f64, b: f64, n: usize) -> Vec<(f64, f64)> {
    let rule = gl_rule(n);
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    rule.0.iter().zip(&rule.1).map(|(x, w)| (c + h * x, w * h)).collect()
}

/// Composite Simpson rule on equally spaced samples (odd count).
pub fn simpson(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    assert!(n >= 3 && n % 2 == 1, "simpson needs an odd number (>= 3) of samples");
    let mut s = values[0] + values[n - 1];
    for (i, v) in values.iter().enumerate().take(n - 1).skip(1) {
        s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    s * h / 3.0
}

pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        for n in 1..12 {
            let deg = 2 * n - 1;
            let v = gauss_legendre(|x| x.powi(deg as i32) + 1.0, 0.0, 1.0, n);
            assert!((v - (1.0 / (deg as f64 + 1.0) + 1.0)).abs() < 1e-13, "n={n} v={v}");
        }
        assert!((gauss_legendre(f64::sin, 0.0, PI, 64) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn simpson_integrates_cubics() {
        let h = 0.25;
        let v: Vec<f64> = (0..9).map(|i| (i as f64 * h).powi(3)).collect();
        assert!((simpson(&v, h) - 4.0).abs() < 1e-13);
    }

    #[test]
    fn pairwise_matches_naive() {
        let xs: Vec<f64> = (0..1000).map(|i| 1.0 / (i as f64 + 1.0)).collect();
        assert!((pairwise_sum(&xs) - xs.iter().sum::<f64>()).abs() < 1e-12);
    }
}

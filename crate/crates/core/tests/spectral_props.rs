use std::f64::consts::PI;

use kslab::ksop::{phase_coordinates, reconstruct_couplings};
use kslab::model::{sample_couplings, ModelConfig, ModelSpec, Profile};
use kslab::spectral::{count_eigenvalues_below, dense_oracle_eigenvalues, find_eigenvalues_in_window};
use proptest::prelude::*;

fn spec_with(background: Profile, e_max: f64) -> ModelSpec {
    let mut c = ModelConfig::reference();
    c.background = background;
    c.e_max = e_max;
    c.build().unwrap()
}

#[test]
fn shooting_matches_dense_oracle() {
    let spec = ModelSpec::reference();
    let mut worst = 0.0f64;
    for seed in 0..12u64 {
        let l = 1 + (seed % 3) as usize;
        let omega = sample_couplings(&spec.coupling, 2 * l, seed).unwrap();
        let shoot = find_eigenvalues_in_window(&spec, &omega, l, 1e-11).unwrap();
        let dense = dense_oracle_eigenvalues(&spec, &omega, l, 1e-3).unwrap();
        assert_eq!(shoot.len(), dense.len(), "seed {seed}");
        for (p, d) in shoot.iter().zip(&dense) {
            worst = worst.max((p.energy - d).abs());
        }
        let below = dense.iter().filter(|&&e| e <= 2.0).count();
        assert_eq!(count_eigenvalues_below(&spec, &omega, l, 2.0).unwrap(), below);
    }
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn free_levels_are_exact() {
    let spec = ModelSpec::reference().with_e_max(10.0).unwrap();
    for l in 1..=3 {
        let pairs = find_eigenvalues_in_window(&spec, &vec![0.0; 2 * l], l, 1e-13).unwrap();
        assert!(!pairs.is_empty());
        for p in pairs {
            let exact = (p.index_k as f64 * PI / (2.0 * l as f64)).powi(2);
            assert!((p.energy - exact).abs() < 1e-8, "L={l} k={} {} vs {exact}", p.index_k, p.energy);
        }
    }
}

fn couplings(l: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, 2 * l)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn constant_background_shifts_the_spectrum(omega in couplings(2), shift in 0.5..5.0f64) {
        let base = spec_with(Profile::Zero, 3.0);
        let shifted = spec_with(Profile::Constant { value: shift }, 3.0 + shift);
        for e in [-1.0, 0.7, 1.9, 2.8] {
            prop_assert_eq!(
                count_eigenvalues_below(&base, &omega, 2, e).unwrap(),
                count_eigenvalues_below(&shifted, &omega, 2, e + shift).unwrap()
            );
        }
    }

    // Raising one coupling of a non-negative bump never lowers a level.
    #[test]
    fn levels_increase_with_couplings(omega in couplings(2), site in 0usize..4, dw in 0.05..1.0f64) {
        let spec = ModelSpec::reference();
        let mut up = omega.clone();
        up[site] += dw;
        let a = dense_oracle_eigenvalues(&spec, &omega, 2, 2e-3).unwrap();
        let b = dense_oracle_eigenvalues(&spec.with_e_max(4.0).unwrap(), &up, 2, 2e-3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(y >= &(x - 1e-9), "{x} -> {y}");
        }
    }

    #[test]
    fn eigenpair_invariants(omega in couplings(2)) {
        let spec = ModelSpec::reference();
        let pairs = find_eigenvalues_in_window(&spec, &omega, 2, 1e-12).unwrap();
        for w in pairs.windows(2) {
            prop_assert!(w[1].energy > w[0].energy + 1e-6);
        }
        for p in &pairs {
            prop_assert!((p.l2_norm_check - 1.0).abs() < 1e-10);
            prop_assert!(p.eigenfunction[0].abs() < 1e-12);
            prop_assert!(p.eigenfunction.last().unwrap().abs() < 1e-5);
            // v_k has k - 1 interior sign changes.
            let v = &p.eigenfunction[1..p.eigenfunction.len() - 1];
            let big: Vec<f64> = v.iter().copied().filter(|x| x.abs() > 1e-6).collect();
            let changes = big.windows(2).filter(|w| w[0].signum() != w[1].signum()).count();
            prop_assert_eq!(changes, p.index_k - 1);
        }
    }

    #[test]
    fn change_of_variables_round_trip(l in 1usize..=3, seed in any::<u64>(), pick in 0.0..1.0f64) {
        let spec = ModelSpec::reference();
        let omega = sample_couplings(&spec.coupling, 2 * l, seed).unwrap();
        let pairs = find_eigenvalues_in_window(&spec, &omega, l, 1e-11).unwrap();
        prop_assume!(!pairs.is_empty());
        let k = pairs[((pick * pairs.len() as f64) as usize).min(pairs.len() - 1)].index_k;
        let c = phase_coordinates(&spec, &omega, l, k, 1e-14).unwrap();
        prop_assert_eq!(c.thetas.len(), 2 * l - 1);
        let back = reconstruct_couplings(&spec, &c).unwrap();
        for (a, b) in omega.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-6, "{:?} vs {:?}", omega, back);
        }
    }
}

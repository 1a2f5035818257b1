//! Kernel and stationary-profile oracles: closed-form values, asymptotic laws
//! and brute-force references computed independently of the library paths.

use std::f64::consts::LN_2;

use approx::assert_relative_eq;
use cfpeaks::kernels::{Kernel, KernelModel};
use cfpeaks::stationary::{
    a_inf, a_minus_inf, fit_tail_constants, ln_theta, mass_of, profile_auto, profile_from_a, solve_a_for_mass,
    theta_coeff, theta_series, zeta, ProfileBasis,
};

/// `A_M` for `M = 1` and default kernels, from a dense bisection on the
/// log-space series over 2000 lattice points.
const A_M_UNIT_MASS: f64 = 2.801793429558726;

fn defaults() -> KernelModel {
    KernelModel::default()
}

#[test]
fn rate_functions_at_reference_points() {
    let k = defaults();
    assert_eq!(k.k(1.0), 2.0);
    assert_eq!(k.gamma(4.0), 9.0);
    assert_relative_eq!(k.k(1e-300), k.k0, max_relative = 1e-15);
    assert_relative_eq!(k.gamma(1e-300), k.gamma0, max_relative = 1e-15);
    assert_eq!(k.q(0.0), 1.0);
    assert_eq!(k.q(1.0 / 3.0), 0.0);
    assert_eq!(k.q(-1.0 / 3.0), 0.0);
    assert_relative_eq!(k.q(1.0 / 6.0), 0.75, max_relative = 1e-15);
}

#[test]
fn growth_exponents_are_approached_monotonically() {
    let k = defaults();
    let slopes: Vec<f64> = [10.0, 20.0, 30.0].iter().map(|p: &f64| k.k(p.exp2()).log2() / p).collect();
    let target = k.alpha + 1.0;
    assert!(slopes.windows(2).all(|w| (w[1] - target).abs() < (w[0] - target).abs()));
    assert!((slopes[2] - target).abs() < 1e-9);
    for n in 10..=30 {
        let ratio = k.gamma((n as f64 + 1.0).exp2()) / k.gamma((n as f64).exp2());
        assert_relative_eq!(ratio, k.beta.exp2(), max_relative = 2.0 * (-(k.beta * n as f64)).exp2());
    }
}

#[test]
fn coagulation_kernel_support_and_symmetry() {
    let k = defaults();
    for x in [0.01, 0.7, 3.0, 1e4] {
        assert_relative_eq!(k.k_coag(x, x), k.k(x) / (2.0 * x), max_relative = 1e-15);
    }
    assert_eq!(k.k_coag(1.0, 3.0), 0.0);
    assert_eq!(k.k_coag(1.0, 1.5), k.k_coag(1.5, 1.0));
    assert!(k.k_coag(1.0, 1.5) > 0.0);
}

#[test]
fn zeta_asymptotics() {
    let k = defaults();
    assert_relative_eq!(zeta(&k, 0, 0.0), LN_2 * 2.0 / (1.0 + 2f64.powf(1.5)), max_relative = 1e-15);
    let left = (-40f64).exp2() * zeta(&k, -40, 0.0);
    assert_relative_eq!(left, k.k0 * LN_2 / k.gamma0, max_relative = 1e-10);
    let n = 40;
    let right = zeta(&k, n, 0.0) / ((-k.beta).exp2() * LN_2 * ((k.alpha - k.beta) * n as f64).exp2());
    assert_relative_eq!(right, 1.0, max_relative = 1e-8);
}

#[test]
fn theta_limits_and_composition() {
    let k = defaults();
    assert_relative_eq!(theta_coeff(&k, -50, 0.0), 1.0, max_relative = 1e-12);
    assert_relative_eq!(theta_coeff(&k, 50, 0.0), (k.alpha - k.beta + 1.0).exp2(), max_relative = 1e-12);
    assert_relative_eq!(theta_coeff(&k, 0, 0.0), 2.0 * zeta(&k, 1, 0.0) / zeta(&k, 0, 0.0), max_relative = 1e-14);
}

#[test]
fn theta_series_matches_brute_force_sum() {
    let k = defaults();
    // 500 terms j ∈ [−250, 249], summed smallest-first
    let mut terms: Vec<f64> = (-250..250).map(|j| (-(j as f64)).exp2() * ln_theta(&k, j - 1, 0.0)).collect();
    terms.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    let brute: f64 = terms.iter().sum();
    let s = theta_series(&k, 0.0, 1e-12).unwrap();
    assert!((s.value - brute).abs() < 1e-11, "{} vs {brute}", s.value);
    let finer = theta_series(&k, 0.0, 1e-13).unwrap();
    assert!((s.value - finer.value).abs() < 2e-12);
}

#[test]
fn alpha_recurrence_and_limits() {
    let k = defaults();
    let a = 2.0;
    let b = ProfileBasis::new(&k, 0.0, (-60, 8)).unwrap();
    for n in -60..8 {
        let lhs = b.ln_alpha(n + 1, a);
        let rhs = ln_theta(&k, n, 0.0) + 2.0 * b.ln_alpha(n, a);
        assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()), "n = {n}");
    }
    assert!(b.ln_alpha(-60, a).abs() < 1e-12);
    // α_n 2^{α−β+1} e^{A 2^n} → 1
    let limit = |n: i64| b.ln_alpha(n, a) + (k.alpha - k.beta + 1.0) * LN_2 + a * (n as f64).exp2();
    assert!(limit(8).abs() < 1e-2);
    assert!(limit(8).abs() < limit(4).abs());
}

#[test]
fn profile_ratio_identity_and_left_law() {
    let k = defaults();
    for rho in [0.0, 0.5] {
        let p = profile_from_a(&k, 1.5, rho, (-45, 5)).unwrap();
        for (i, w) in p.ln_a.windows(2).enumerate() {
            assert!((w[1] - w[0] - (2.0 * p.alpha[i]).ln()).abs() < 1e-12);
        }
        assert!(p.recurrence_residual() < 1e-12);
        let left = p.a[0] / (p.window.0 as f64).exp2();
        assert_relative_eq!(left, a_minus_inf(&k, rho), max_relative = 1e-9);
        assert_relative_eq!(a_minus_inf(&k, rho), k.gamma0 * (rho + 1.0).exp2() / (k.k0 * LN_2), max_relative = 1e-15);
    }
}

#[test]
fn mass_map_is_decreasing_and_vanishes() {
    let k = defaults();
    let samples = [0.05, 0.2, 0.7, 1.0, 3.0, 9.0, 30.0];
    let masses: Vec<f64> = samples.iter().map(|a| mass_of(&k, *a, 0.0).unwrap()).collect();
    assert!(masses.windows(2).all(|w| w[0] > w[1]));
    assert!(mass_of(&k, 50.0, 0.0).unwrap() < 1e-3 * mass_of(&k, 1.0, 0.0).unwrap());
    for a in [0.3, 2.0] {
        let p = profile_auto(&k, a, 0.0).unwrap();
        assert_relative_eq!(p.mass, mass_of(&k, a, 0.0).unwrap(), max_relative = 1e-10);
    }
}

#[test]
fn mass_inversion_round_trip_and_reference() {
    let k = defaults();
    for a_star in [0.1, 1.0, 10.0] {
        let m = mass_of(&k, a_star, 0.0).unwrap();
        assert_relative_eq!(solve_a_for_mass(&k, m, 0.0, 1e-12).unwrap(), a_star, max_relative = 1e-9);
    }
    let a: Vec<f64> = [0.1, 1.0, 10.0].iter().map(|m| solve_a_for_mass(&k, *m, 0.0, 1e-12).unwrap()).collect();
    assert!(a[0] > a[1] && a[1] > a[2]);
    assert_relative_eq!(solve_a_for_mass(&k, 1.0, 0.0, 1e-8).unwrap(), A_M_UNIT_MASS, max_relative = 1e-8);
}

#[test]
fn dense_bisection_reproduces_the_unit_mass_parameter() {
    // direct sum of the 2000 mass terms n ∈ [−1900, 99], bisected to 1e-12
    let k = defaults();
    let b = ProfileBasis::new(&k, 0.0, (-1900, 99)).unwrap();
    let mass = |a: f64| {
        let mut terms: Vec<f64> = (-1900..100).map(|n| b.ln_mass_term(n, a).exp()).collect();
        terms.sort_by(f64::total_cmp);
        terms.iter().sum::<f64>()
    };
    let (mut lo, mut hi) = (0.5, 20.0);
    while hi - lo > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    assert_relative_eq!(0.5 * (lo + hi), A_M_UNIT_MASS, max_relative = 1e-10);
}

#[test]
fn fitted_tail_constants() {
    let k = defaults();
    for rho in [0.0, 0.5] {
        let a = solve_a_for_mass(&k, 1.0, rho, 1e-13).unwrap();
        let p = profile_from_a(&k, a, rho, (-20, 12)).unwrap();
        let fit = fit_tail_constants(&k, &p).unwrap();
        assert_relative_eq!(fit.a_minus_inf_hat, a_minus_inf(&k, rho), max_relative = 1e-3);
        assert_relative_eq!(fit.a_inf_hat, a_inf(&k, rho), max_relative = 1e-2);
        assert_relative_eq!(fit.a_hat, a, max_relative = 1e-2);
        let expected = LN_2.recip() * k.beta.exp2() * ((k.beta - k.alpha) * (rho + 1.0)).exp2();
        assert_relative_eq!(a_inf(&k, rho), expected, max_relative = 1e-15);
    }
}

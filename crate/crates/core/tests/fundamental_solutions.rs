//! Closed-form fundamental solutions against direct stiff integration,
//! quadrature and their own asymptotic bounds.

use approx::assert_relative_eq;
use cfpeaks::fundsol::{
    check_n0, check_n0_with_span, dbeta_psi, duhamel_solve, psi, psi_inf, psi_integral_check, simplified_ode_solve,
    MAX_SPAN,
};
use cfpeaks::kernels::{Kernel, KernelModel};
use cfpeaks::linear::{d_beta_inf, extrapolate_s_inf, LatticeSeq};
use cfpeaks::Error;

fn gamma_n(k: &KernelModel, n: i64) -> f64 {
    k.gamma((n as f64).exp2())
}

#[test]
fn threshold_conditions_hold_and_are_stable() {
    let k = KernelModel::default();
    let n0 = check_n0(&k).unwrap();
    for n in n0..n0 + 60 {
        assert!(gamma_n(&k, n + 1) > gamma_n(&k, n));
    }
    let r = gamma_n(&k, n0 + 10) / gamma_n(&k, n0) / (10.0 * k.beta).exp2();
    assert!((0.5..=1.5).contains(&r));
    assert_eq!(check_n0_with_span(&k, 120).unwrap(), n0);
}

#[test]
fn initial_condition_and_causality() {
    let k = KernelModel::default();
    let ell = check_n0(&k).unwrap() + 1;
    for n in ell..ell + 6 {
        assert_eq!(psi(&k, n, ell, 0.0).unwrap(), if n == ell { 1.0 } else { 0.0 });
    }
    for t in [0.1, 1.0, 7.0] {
        assert_eq!(psi(&k, ell - 1, ell, t).unwrap(), 0.0);
    }
}

#[test]
fn residue_formula_matches_stiff_integration() {
    let k = KernelModel::default();
    let n0 = check_n0(&k).unwrap();
    let times = [0.0, 0.1, 1.0, 5.0];
    let mut worst: f64 = 0.0;
    for ell in [n0 + 1, n0 + 3] {
        let w = (ell, ell + 8);
        let tr = simplified_ode_solve(&k, &LatticeSeq::delta(w, ell), None, None, &times, 1e-13).unwrap();
        for (i, t) in times.iter().enumerate().skip(1) {
            for n in w.0..=w.1 {
                let closed = psi(&k, n, ell, *t).unwrap();
                assert!(closed >= 0.0, "negative psi at n = {n}, t = {t}");
                worst = worst.max((tr.states[i].at(n) - closed).abs() / closed);
            }
        }
    }
    assert!(worst < 1e-6, "max relative error {worst:e}");
}

#[test]
fn normalization_identity_and_quadrature() {
    let k = KernelModel::default();
    let ell = check_n0(&k).unwrap() + 1;
    assert!((psi_integral_check(&k, ell, ell).unwrap() - 1.0).abs() < 1e-15);
    for n in ell..=ell + 10 {
        assert!((psi_integral_check(&k, n, ell).unwrap() - 1.0).abs() < 1e-8);
    }
    // composite Simpson on [0, T]; the neglected tail is below e^{−50}
    let n = ell + 3;
    let g_ell = gamma_n(&k, ell);
    let t_cut = 200.0 / g_ell;
    let steps = 20_000;
    let h = t_cut / steps as f64;
    let f = |t: f64| psi(&k, n, ell, t).unwrap();
    let mut simpson = f(0.0) + f(t_cut);
    for i in 1..steps {
        simpson += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    simpson *= h / 3.0;
    let integral = 0.25 * g_ell * simpson;
    assert!((integral - 1.0).abs() < 1e-6, "{integral}");
}

#[test]
fn span_cap_raises_precision_error() {
    let k = KernelModel::default();
    let ell = check_n0(&k).unwrap() + 1;
    assert!(matches!(psi(&k, ell + MAX_SPAN + 1, ell, 1.0), Err(Error::Precision(_))));
}

#[test]
fn convergence_to_the_right_limit() {
    let k = KernelModel::default();
    let ell = check_n0(&k).unwrap() + 1;
    for t in [0.5, 2.0] {
        let lim = psi_inf(&k, ell, t).unwrap();
        let gaps: Vec<f64> = (2..=14).map(|d| (psi(&k, ell + d, ell, t).unwrap() - lim).abs()).collect();
        let scaled: Vec<f64> = (2..=14).zip(&gaps).map(|(d, g)| g * (k.beta * d as f64).exp2()).collect();
        let c = scaled.iter().copied().fold(0.0, f64::max);
        assert!(c.is_finite() && scaled[scaled.len() - 1] <= c);
        assert!(gaps[gaps.len() - 1] < 1e-5 * gaps[0]);
    }
    let g = gamma_n(&k, ell);
    let decay: Vec<f64> = (0..=20).map(|i| psi_inf(&k, ell, i as f64 + 0.01).unwrap() * (0.25 * g * (i as f64 + 0.01)).exp()).collect();
    let sup = decay.iter().copied().fold(0.0, f64::max);
    assert!(sup.is_finite() && sup < 10.0, "{decay:?}");
}

#[test]
fn telescoping_differences_have_a_stable_constant() {
    let k = KernelModel::default();
    let ell = check_n0(&k).unwrap() + 1;
    let g = gamma_n(&k, ell);
    let constant = |max_d: i64| {
        let mut c: f64 = 0.0;
        for t in [0.1, 1.0, 5.0] {
            for d in 0..max_d {
                let diff = (psi(&k, ell + d, ell, t).unwrap() - psi(&k, ell + d + 1, ell, t).unwrap()).abs();
                c = c.max(diff * (k.beta * d as f64).exp2() * (0.25 * g * t).exp());
            }
        }
        c
    };
    let (c8, c16) = (constant(8), constant(16));
    assert!(c16 <= 1.5 * c8, "{c8} vs {c16}");
}

#[test]
fn limits_match_extrapolated_integration() {
    let k = KernelModel::default();
    let ell = check_n0(&k).unwrap() + 1;
    let w = (ell, ell + 18);
    let tr = simplified_ode_solve(&k, &LatticeSeq::delta(w, ell), None, None, &[0.0, 1.0], 1e-13).unwrap();
    let s = extrapolate_s_inf(&tr.states[1], k.beta).unwrap().value;
    assert_relative_eq!(s, psi_inf(&k, ell, 1.0).unwrap(), max_relative = 1e-5);
    let d = d_beta_inf(&tr.states[1], k.beta).unwrap().value;
    assert_relative_eq!(d, dbeta_psi(&k, ell, 1.0).unwrap(), max_relative = 1e-4);
}

#[test]
fn dbeta_sign_and_envelope() {
    let k = KernelModel::default();
    let ell = check_n0(&k).unwrap() + 1;
    // the slowest mode k = ℓ, with its negative prefactor, dominates once the
    // faster modes have decayed; while Ψ_∞ is still rising the sign is positive
    assert!(dbeta_psi(&k, ell, 5.0).unwrap() < 0.0);
    assert!(dbeta_psi(&k, ell, 2.0).unwrap() < 0.0);
    assert!(dbeta_psi(&k, ell, 0.1).unwrap() > 0.0);
    let g = gamma_n(&k, ell);
    let scale = (k.beta * ell as f64).exp2();
    let env: Vec<f64> = (1..=100)
        .map(|i| {
            let t = 0.1 * i as f64;
            dbeta_psi(&k, ell, t).unwrap().abs() / (scale * (-0.25 * g * t).exp())
        })
        .collect();
    assert!(env.iter().all(|e| e.is_finite() && *e < 100.0), "{env:?}");
}

#[test]
fn duhamel_reproduces_delta_data_and_constant_forcing() {
    let k = KernelModel::default();
    let n0 = check_n0(&k).unwrap();
    let ell = n0 + 1;
    let w = (ell, ell + 6);
    let times = [0.0, 0.5, 2.0];
    let tr = duhamel_solve(&k, &|_| 0.0, None, &LatticeSeq::delta(w, ell), &times, 1e-10).unwrap();
    for (i, t) in times.iter().enumerate() {
        for n in w.0..=w.1 {
            let p = psi(&k, n, ell, *t).unwrap();
            assert!((tr.states[i].at(n) - p).abs() <= 1e-12 * (1.0 + p.abs()), "n = {n}, t = {t}");
        }
    }
    // λ ≡ c drives every component to c
    let c = 0.8;
    let late = [0.0, 40.0 / gamma_n(&k, ell) * 4.0];
    let tr = duhamel_solve(&k, &|_| c, None, &LatticeSeq::zeros(w), &late, 1e-10).unwrap();
    for n in w.0..=w.1 {
        assert!((tr.states[1].at(n) - c).abs() < 1e-6, "n = {n}: {}", tr.states[1].at(n));
    }
    // the same forcing through direct integration
    let direct = simplified_ode_solve(&k, &LatticeSeq::zeros(w), Some(&|_| c), None, &[0.0, 1.0], 1e-12).unwrap();
    let quad = duhamel_solve(&k, &|_| c, None, &LatticeSeq::zeros(w), &[0.0, 1.0], 1e-10).unwrap();
    for n in w.0..=w.1 {
        assert_relative_eq!(quad.states[1].at(n), direct.states[1].at(n), max_relative = 1e-5);
    }
}

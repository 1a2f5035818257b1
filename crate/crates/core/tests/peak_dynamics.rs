//! Nonlinear peak system: equilibria, conservation, decomposition, the
//! nonlinearity `h` and the fixed-point scheme.

use approx::assert_relative_eq;
use cfpeaks::kernels::{lattice_xi, Kernel, KernelModel};
use cfpeaks::linear::LatticeSeq;
use cfpeaks::peaks::{
    decompose, evolve_b, h_seq, picard_fixed_point, rhs_b, verify_main_theorem, Decomposer, FixedPointOptions,
    PeakState,
};
use cfpeaks::stationary::{mass_of, profile_from_a, solve_a_for_mass, PeakProfile, ProfileBasis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit_mass_profile(window: (i64, i64)) -> (KernelModel, PeakProfile) {
    let k = KernelModel::default();
    let a_m = solve_a_for_mass(&k, 1.0, 0.0, 1e-13).unwrap();
    (k, profile_from_a(&k, a_m, 0.0, window).unwrap())
}

#[test]
fn stationary_profile_is_an_equilibrium() {
    for rho in [0.0, 0.5] {
        let k = KernelModel::default();
        let p = profile_from_a(&k, 2.0, rho, (-40, 8)).unwrap();
        let r = rhs_b(&k, &PeakState::from_profile(&p), None).unwrap();
        for ((n, v), a) in p.indices().zip(&r).zip(&p.a) {
            let flux = k.gamma(lattice_xi(n + 1, rho)) * a;
            assert!(v.abs() <= 1e-10 * flux.max(f64::MIN_POSITIVE), "n = {n}: {v:e} vs {flux:e}");
        }
    }
}

#[test]
fn mass_derivative_telescopes() {
    let k = KernelModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for rho in [0.0, 0.3] {
        let b: Vec<f64> = (0..25).map(|_| rng.gen_range(0.0..2.0)).collect();
        let s = PeakState::new((-15, 9), b, rho).unwrap();
        let r = rhs_b(&k, &s, None).unwrap();
        let terms: Vec<f64> = s.indices().zip(&r).map(|(n, v)| lattice_xi(n, rho) * v).collect();
        let scale = terms.iter().map(|t| t.abs()).fold(0.0, f64::max);
        assert!(terms.iter().sum::<f64>().abs() < 1e-12 * scale);
    }
}

#[test]
fn single_peak_touches_its_two_neighbours_only() {
    // self-coagulation feeds n + 1, fragmentation feeds n − 1
    let k = KernelModel::default();
    let mut b = vec![0.0; 7];
    b[3] = 0.4;
    let s = PeakState::new((-3, 3), b, 0.0).unwrap();
    let r = rhs_b(&k, &s, None).unwrap();
    let nonzero: Vec<usize> = r.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i).collect();
    assert_eq!(nonzero, vec![2, 3, 4]);
    assert!(r[2] > 0.0 && r[4] > 0.0 && r[3] < 0.0);
}

#[test]
fn equilibrium_stays_put_and_scaled_data_keep_their_mass() {
    let (k, p) = unit_mass_profile((-30, 6));
    let grid: Vec<f64> = (0..=10).map(|i| i as f64).collect();
    let tr = evolve_b(&k, &PeakState::from_profile(&p), &grid, 1e-10, None).unwrap();
    for s in &tr.states {
        for (v, a) in s.b.iter().zip(&p.a) {
            assert!((v - a).abs() <= 1e-8 * a.max(1e-300));
        }
    }
    let scaled = PeakState::perturbed(&p, |_| 0.01).unwrap();
    let tr = evolve_b(&k, &scaled, &grid, 1e-10, None).unwrap();
    for s in &tr.states {
        assert_relative_eq!(s.mass, 1.01 * p.mass, max_relative = 1e-8);
    }
}

#[test]
fn sine_perturbation_decays() {
    let (k, p) = unit_mass_profile((-30, 6));
    let b0 = PeakState::perturbed(&p, |n| 0.01 * (n as f64).sin()).unwrap();
    let grid: Vec<f64> = (0..=40).map(|i| 0.5 * i as f64).collect();
    let rep = verify_main_theorem(&k, &b0, &grid, 1e-10, Some(p.a_param)).unwrap();
    let nu = rep.nu_fit.unwrap();
    assert!(nu > 0.0, "fitted rate {nu}");
    assert!(rep.envelope[rep.envelope.len() - 1] < 0.1 * rep.envelope[1]);
    assert!(rep.max_relative_jump < 1e-2);
    assert!(rep.mass_drift < 1e-8);
}

#[test]
fn decomposition_of_ansatz_members() {
    let k = KernelModel::default();
    let a_star = 1.7;
    let p = profile_from_a(&k, a_star, 0.0, (-30, 8)).unwrap();
    let d = decompose(&k, &PeakState::from_profile(&p)).unwrap();
    assert_relative_eq!(d.a_param, a_star, max_relative = 1e-9);
    assert!(d.eps.values.iter().all(|e| e.abs() < 1e-9));
    // a uniformly scaled profile: A is read off the right edge, so ε keeps the
    // full scaling on the left and is an order of magnitude smaller on the right
    let scaled = PeakState::perturbed(&p, |_| 0.05).unwrap();
    let d = decompose(&k, &scaled).unwrap();
    let eps = &d.eps.values;
    assert_relative_eq!(eps[0], 0.05, max_relative = 1e-9);
    assert!(eps[eps.len() - 1].abs() < 0.1 * eps[0]);
    assert_relative_eq!(d.a_param, a_star, max_relative = 1e-3);
    let basis = ProfileBasis::new(&k, 0.0, scaled.window).unwrap();
    for (r, b) in d.reconstruct(&basis).iter().zip(&scaled.b) {
        assert!((r - b).abs() <= 1e-12 * b.max(1e-300));
    }
    for (n, (e, y)) in d.eps.iter().zip(d.y.values.iter()).map(|((n, e), y)| (n, (e, y))) {
        assert_eq!(*y, (-(n as f64)).exp2() * e);
    }
}

#[test]
fn a_path_is_continuous_along_trajectories() {
    let (k, p) = unit_mass_profile((-30, 6));
    let dec = Decomposer::new(&k, 0.0, p.window).unwrap();
    let b0 = PeakState::perturbed(&p, |n| 0.01 * (0.7 * n as f64).cos() * if n > 0 { 0.0 } else { 1.0 }).unwrap();
    let grid: Vec<f64> = (0..=20).map(|i| 0.25 * i as f64).collect();
    let tr = evolve_b(&k, &b0, &grid, 1e-10, None).unwrap();
    let a: Vec<f64> = tr.states.iter().map(|s| dec.decompose(s).unwrap().a_param).collect();
    for w in a.windows(2) {
        assert!(((w[1] - w[0]) / w[0]).abs() < 1e-2);
    }
}

#[test]
fn nonlinearity_structure() {
    let (k, p) = unit_mass_profile((-20, 6));
    let a_m = p.a_param;
    let w = (-20, 6);
    let zero = h_seq(&k, &LatticeSeq::zeros(w), a_m, a_m).unwrap();
    assert!(zero.values.iter().all(|v| *v == 0.0));
    // with A = A_M only the quadratic part remains: h(λy) = λ² h(y)
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let y = LatticeSeq::from_fn(w, |_| rng.gen_range(-1e-3..1e-3));
    let h1 = h_seq(&k, &y, a_m, a_m).unwrap();
    let h3 = h_seq(&k, &y.map(|_, v| 3.0 * v), a_m, a_m).unwrap();
    for (a, b) in h1.values.iter().zip(&h3.values) {
        assert!((b - 9.0 * a).abs() <= 1e-12 * b.abs().max(1e-300));
    }
    // away from A_M a linear part appears
    let ha = h_seq(&k, &y, 1.1 * a_m, a_m).unwrap();
    let ha3 = h_seq(&k, &y.map(|_, v| 3.0 * v), 1.1 * a_m, a_m).unwrap();
    assert!(ha.values.iter().zip(&ha3.values).any(|(a, b)| (b - 9.0 * a).abs() > 1e-6 * b.abs()));
}

#[test]
fn fixed_point_of_zero_data_is_zero() {
    let (k, p) = unit_mass_profile((-20, 6));
    let y0 = LatticeSeq::zeros((-20, 10));
    let fp = picard_fixed_point(&k, &y0, p.a_param, p.mass, &FixedPointOptions::new(2.0, 0.7)).unwrap();
    assert!(fp.sweeps <= 2, "{} sweeps", fp.sweeps);
    assert!(fp.lambda_path.iter().all(|l| l.abs() < 1e-12));
    assert!(fp.a_path.iter().all(|a| (a - p.a_param).abs() < 1e-12));
    assert!(fp.y_path.states.iter().all(|s| s.values.iter().all(|v| v.abs() < 1e-12)));
}

#[test]
fn fixed_point_with_small_data_converges_to_the_right_parameter() {
    let (k, p) = unit_mass_profile((-30, 6));
    // smooth mass-neutral ε of size 1e-3
    let num: f64 = p.indices().zip(&p.a).map(|(n, a)| (n as f64).exp2() * a * (n as f64).sin()).sum();
    let den: f64 = p.indices().zip(&p.a).map(|(n, a)| (n as f64).exp2() * a).sum();
    let c = num / den;
    let eps = |n: i64| if n <= 6 { 1e-3 * ((n as f64).sin() - c) / (1.0 + c.abs()) } else { 0.0 };
    let y0 = LatticeSeq::from_fn((-30, 12), |n| (-(n as f64)).exp2() * eps(n));
    let fp = picard_fixed_point(&k, &y0, p.a_param, p.mass, &FixedPointOptions::new(10.0, 0.74)).unwrap();
    assert!(fp.iteration_log.iter().all(|f| *f < 1.0));
    // ε vanishes at the right edge initially, so A(0) = A_M; A(t) drifts while
    // the perturbation reaches the edge and then returns to A_M
    let gap = |a: &f64| (a - p.a_param).abs();
    let peak = fp.a_path.iter().map(gap).fold(0.0, f64::max);
    let last = gap(&fp.a_path[fp.a_path.len() - 1]);
    assert!(peak < 1e-3 && last < 1e-6 && last < 1e-2 * peak, "peak {peak:e}, terminal {last:e}");
    // direct-integration cross-check of the reconstructed weights
    let b0 = PeakState::perturbed(&p, eps).unwrap();
    let direct = evolve_b(&k, &b0, &fp.t_grid, 1e-12, None).unwrap();
    for i in (0..fp.t_grid.len()).step_by(5) {
        let rb = fp.reconstruct(&k, i, p.window).unwrap();
        let err = rb.iter().zip(&direct.states[i].b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-4, "t = {}: {err:e}", fp.t_grid[i]);
    }
}

#[test]
fn stationary_and_detuned_inputs() {
    let (k, p) = unit_mass_profile((-30, 6));
    let grid: Vec<f64> = (0..=8).map(|i| 2.5 * i as f64).collect();
    let rep = verify_main_theorem(&k, &PeakState::from_profile(&p), &grid, 1e-10, None).unwrap();
    assert!(rep.a_path.iter().all(|a| (a - p.a_param).abs() < 1e-8));
    assert!(rep.envelope.iter().all(|e| *e < 1e-8));
    // ε = 0 around 1.05 A_M is itself stationary for its own mass M'
    let detuned = profile_from_a(&k, 1.05 * p.a_param, 0.0, p.window).unwrap();
    let rep = verify_main_theorem(&k, &PeakState::from_profile(&detuned), &grid, 1e-10, None).unwrap();
    let m_prime = mass_of(&k, 1.05 * p.a_param, 0.0).unwrap();
    assert_relative_eq!(rep.a_target, solve_a_for_mass(&k, m_prime, 0.0, 1e-13).unwrap(), max_relative = 1e-9);
    assert!(rep.terminal_gap < 1e-6, "{}", rep.terminal_gap);
}

//! Randomized invariants of kernels, profiles, operators and measures.

use cfpeaks::fundsol::{check_n0, psi};
use cfpeaks::kernels::{Kernel, KernelModel};
use cfpeaks::linear::{l_apply, LatticeSeq, LinearModel};
use cfpeaks::measures::{norm_g, weak_residual, Boundary, GridMeasure, TestFunction};
use cfpeaks::stationary::mass_of;
use proptest::prelude::*;

fn atomic(points: Vec<(f64, f64)>) -> Option<GridMeasure> {
    let mut points = points;
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    points.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-6);
    let (grid, weights) = points.into_iter().unzip();
    GridMeasure::atomic(grid, weights).ok()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coagulation_kernel_is_symmetric_and_local(x in 1e-3f64..1e3, y in 1e-3f64..1e3) {
        let k = KernelModel::default();
        prop_assert_eq!(k.k_coag(x, y), k.k_coag(y, x));
        let s = (x - y) / (x + y);
        if 9.0 * s * s >= 1.0 {
            prop_assert_eq!(k.k_coag(x, y), 0.0);
        } else {
            prop_assert!(k.k_coag(x, y) > 0.0);
        }
    }

    #[test]
    fn mass_test_function_has_zero_weak_residual(points in prop::collection::vec((-6f64..6.0, 0f64..2.0), 1..25)) {
        let k = KernelModel::default();
        if let Some(g) = atomic(points) {
            let mass = TestFunction::new("mass", 1.0, f64::exp2);
            let res = weak_residual(&k, &g, &mass, Boundary::Open).unwrap();
            prop_assert!(res.relative() < 1e-12, "{:?}", res);
        }
    }

    #[test]
    fn operator_annihilates_constants(c in -1e3f64..1e3, lo in -30i64..-5, hi in 2i64..20) {
        let k = KernelModel::default();
        let model = LinearModel::new(&k, 2.0, (lo, hi)).unwrap();
        let out = l_apply(&model, &LatticeSeq::constant((lo, hi), c));
        prop_assert!(out.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mass_map_is_decreasing(a in 0.05f64..20.0, factor in 1.01f64..3.0) {
        let k = KernelModel::default();
        prop_assert!(mass_of(&k, a * factor, 0.0).unwrap() < mass_of(&k, a, 0.0).unwrap());
    }

    #[test]
    fn fundamental_solutions_are_nonnegative(d in 0i64..12, t in 0f64..20.0) {
        let k = KernelModel::default();
        let ell = check_n0(&k).unwrap() + 1;
        prop_assert!(psi(&k, ell + d, ell, t).unwrap() >= 0.0);
    }

    #[test]
    fn norm_is_subadditive(points in prop::collection::vec((-8f64..6.0, 0f64..2.0, 0f64..2.0), 1..25)) {
        let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.0, p.1)).collect();
        if let Some(a) = atomic(pairs) {
            // second weight set on the same support
            let extra: Vec<f64> = points.iter().take(a.len()).map(|p| p.2).collect();
            let b = a.with_weights(extra);
            let sum = a.with_weights(a.weights.iter().zip(&b.weights).map(|(x, y)| x + y).collect());
            prop_assert!(norm_g(&sum) <= (norm_g(&a) + norm_g(&b)) * (1.0 + 1e-14));
        }
    }
}

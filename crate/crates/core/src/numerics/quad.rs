//! Gauss–Legendre quadrature.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1],
/// computed by Newton iteration on the Legendre polynomial.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p1 = z;
                p0 = 1.0;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Composite Gauss–Legendre rule on `[a, b]` with `panels` equal panels.
pub fn composite<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, panels: usize, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let (x, w) = rule;
    let h = (b - a) / panels as f64;
    let mut acc = super::sum::CompensatedSum::new();
    for p in 0..panels {
        let lo = a + p as f64 * h;
        for (xi, wi) in x.iter().zip(w) {
            acc.add(0.5 * h * wi * f(lo + 0.5 * h * (xi + 1.0)));
        }
    }
    acc.value()
}

/// Nodes and weights for `∫_0^t f(u) du` after the substitution `u = v^p`
/// (`p ≥ 1`), with panels in `v` graded geometrically toward both ends:
/// `per_octave` panels per halving of the distance to an endpoint, down to
/// relative distance `2^{-octaves}` (at most `2^{-45}` toward `u = t`). Suited to integrands that vary on
/// scales much shorter than `t` near `u = 0` and are mildly singular at `u = t`.
pub fn graded_nodes(t: f64, p: f64, per_octave: usize, octaves: usize, rule: &(Vec<f64>, Vec<f64>)) -> Vec<(f64, f64)> {
    let v_end = t.powf(1.0 / p);
    let mid = 0.5 * v_end;
    let levels = per_octave * octaves;
    let mut breaks = vec![0.0];
    for j in (0..levels).rev() {
        breaks.push(mid * (-(j as f64 + 1.0) / per_octave as f64).exp2());
    }
    breaks.push(mid);
    // near v_end the panel widths must stay representable relative to v_end
    for j in 1..=levels.min(per_octave * 45) {
        breaks.push(v_end - mid * (-(j as f64) / per_octave as f64).exp2());
    }
    breaks.push(v_end);
    let (x, w) = rule;
    let mut out = Vec::with_capacity((breaks.len() - 1) * x.len());
    for pair in breaks.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        let h = hi - lo;
        for (xi, wi) in x.iter().zip(w) {
            let v = lo + 0.5 * h * (xi + 1.0);
            out.push((v.powf(p).min(t), 0.5 * h * wi * p * v.powf(p - 1.0)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        let rule = gauss_legendre(8);
        let s: f64 = rule.1.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        // degree 15 monomial integrates exactly
        let v = composite(|x| x.powi(14), -1.0, 1.0, 1, &rule);
        assert!((v - 2.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn graded_rule_resolves_stiff_and_singular_integrands() {
        let rule = gauss_legendre(8);
        let nodes = graded_nodes(2.0, 3.0, 2, 60, &rule);
        let stiff: f64 = nodes.iter().map(|(u, w)| w * (-1e6 * u).exp()).sum();
        assert!((stiff / 1e-6 - 1.0).abs() < 1e-10);
        let sing: f64 = nodes.iter().map(|(u, w)| w * (2.0 - u).powf(-1.0 / 3.0)).sum();
        assert!((sing - 1.5 * 2f64.powf(2.0 / 3.0)).abs() < 1e-8, "{sing} {stiff}");
    }

    #[test]
    fn composite_rule_on_exponential() {
        let rule = gauss_legendre(6);
        let v = composite(|x| (-x).exp(), 0.0, 3.0, 4, &rule);
        assert!((v - (1.0 - (-3.0f64).exp())).abs() < 1e-13);
    }
}

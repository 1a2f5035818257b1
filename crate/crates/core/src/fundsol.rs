//! Fundamental solutions of the σ-free lattice system
//!
//! ```text
//! dΨ_ℓ/dt = −(γ_ℓ/4) Ψ_ℓ,   dΨ_n/dt = (γ_n/4)(Ψ_{n−1} − Ψ_n),  n > ℓ,   Ψ_n(0) = δ(n − ℓ),
//! ```
//!
//! with `γ_n = γ(2^n)`. This is a pure-death chain with distinct rates, so the
//! solution is a finite sum of exponentials,
//! `Ψ_n^{(ℓ)}(t) = Σ_{k=ℓ}^{n} c_k e^{−γ_k t/4}`,
//! `c_k = (γ_k/γ_ℓ) Π_{j∈[ℓ,n], j≠k} (1 − γ_k/γ_j)^{−1}`.
//! The limits `n → ∞` (`Ψ_∞`, `D^β_∞Ψ`) follow from the same coefficients
//! with infinite, rapidly convergent products.
//!
//! Coefficients are computed in log-magnitude/sign form so that the products
//! neither overflow nor underflow before they are combined.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{lattice_xi, Kernel};
use crate::linear::{check_grid, Diagnostics, LatticeSeq, Trajectory};
use crate::numerics::{gauss_legendre, graded_nodes, integrate, CompensatedSum, OdeOptions, Tridiag, TridiagOde};
use crate::stationary::Window;

/// Largest supported `n − ℓ` for finite-`n` evaluations.
pub const MAX_SPAN: i64 = 24;
/// Largest accepted cancellation ratio `Σ|terms| / |result|`.
pub const MAX_CONDITION: f64 = 1e8;
/// Relative accuracy at which infinite products and series are truncated.
const TAIL_TOL: f64 = 1e-14;
/// Range of candidate thresholds examined by [`check_n0`].
const N0_SCAN: (i64, i64) = (-200, 200);

/// Source index, admissibility threshold and evaluation window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FundSolSpec {
    pub ell: i64,
    pub n0: i64,
    pub window: Window,
}

impl FundSolSpec {
    /// Checks `ℓ ≥ n₀` and `n_min ≥ ℓ`.
    pub fn new(ell: i64, n0: i64, window: Window) -> Result<Self> {
        if ell < n0 {
            return Err(Error::Hypothesis(format!("source index {ell} lies below the threshold n0 = {n0}")));
        }
        if window.0 < ell || window.1 < window.0 {
            return Err(Error::InvalidParameter(format!(
                "window [{}, {}] must start at or after ℓ = {ell}",
                window.0, window.1
            )));
        }
        Ok(Self { ell, n0, window })
    }
}

fn gamma_n(kernel: &dyn Kernel, n: i64) -> f64 {
    kernel.gamma(lattice_xi(n, 0.0))
}

/// Whether both monotonicity and the two-sided ratio bound
/// `½ 2^{β(n−m)} ≤ γ(2^n)/γ(2^m) ≤ (3/2) 2^{β(n−m)}` hold on `[n0, n0 + span]`.
fn threshold_holds(kernel: &dyn Kernel, n0: i64, span: i64) -> bool {
    let beta = kernel.beta();
    let g: Vec<f64> = (n0..=n0 + span + 1).map(|n| gamma_n(kernel, n)).collect();
    if g.windows(2).any(|w| w[1] <= w[0]) {
        return false;
    }
    for m in 0..=span as usize {
        for n in m..=span as usize {
            let r = g[n] / g[m] / (beta * (n - m) as f64).exp2();
            if !(0.5..=1.5).contains(&r) {
                return false;
            }
        }
    }
    true
}

/// Smallest `n₀` for which the rate conditions of the fundamental-solution
/// estimates hold on `[n₀, n₀ + 60]`.
pub fn check_n0(kernel: &dyn Kernel) -> Result<i64> {
    check_n0_with_span(kernel, 60)
}

/// [`check_n0`] with an explicit checked range length.
pub fn check_n0_with_span(kernel: &dyn Kernel, span: i64) -> Result<i64> {
    (N0_SCAN.0..=N0_SCAN.1)
        .find(|&n0| threshold_holds(kernel, n0, span))
        .ok_or_else(|| Error::Hypothesis("no admissible threshold n0 in the scanned range".into()))
}

/// Residue coefficient `c_k` in log-magnitude/sign form for the chain
/// `γ_ℓ, …, γ_n` (`g[0] = γ_ℓ`).
fn ln_coeff(g: &[f64], k: usize) -> (f64, f64) {
    let gk = g[k];
    let mut ln = (gk / g[0]).ln();
    let mut sign = 1.0;
    for (j, &gj) in g.iter().enumerate() {
        if j == k {
            continue;
        }
        let r = gk / gj;
        if j < k {
            ln -= (r - 1.0).ln();
            sign = -sign;
        } else {
            ln -= (-r).ln_1p();
        }
    }
    (ln, sign)
}

/// Residue coefficients `c_k`, `k = ℓ..=n`, for the chain `g`.
pub fn residue_coefficients(g: &[f64]) -> Vec<f64> {
    (0..g.len())
        .map(|k| {
            let (ln, s) = ln_coeff(g, k);
            s * ln.exp()
        })
        .collect()
}

/// Finite chain of rates `γ(2^ℓ), …, γ(2^n)`.
fn chain(kernel: &dyn Kernel, ell: i64, n: i64) -> Vec<f64> {
    (ell..=n).map(|j| gamma_n(kernel, j)).collect()
}

fn check_span(n: i64, ell: i64) -> Result<()> {
    if n - ell > MAX_SPAN {
        Err(Error::Precision(format!(
            "n − ℓ = {} exceeds the double-precision cap {MAX_SPAN}",
            n - ell
        )))
    } else {
        Ok(())
    }
}

fn conditioned(sum: &CompensatedSum, what: &str) -> Result<f64> {
    let v = sum.value();
    let total = sum.abs_total();
    if total > 0.0 && (v == 0.0 || total / v.abs() > MAX_CONDITION) {
        return Err(Error::Precision(format!(
            "{what}: cancellation ratio {:e} exceeds {MAX_CONDITION:e}",
            if v == 0.0 { f64::INFINITY } else { total / v.abs() }
        )));
    }
    Ok(v)
}

/// `Ψ_n^{(ℓ)}(t)` from the residue formula.
pub fn psi(kernel: &dyn Kernel, n: i64, ell: i64, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("time must be nonnegative, got {t}")));
    }
    if n < ell {
        return Ok(0.0);
    }
    if t == 0.0 {
        return Ok(if n == ell { 1.0 } else { 0.0 });
    }
    check_span(n, ell)?;
    let g = chain(kernel, ell, n);
    let sum: CompensatedSum = residue_coefficients(&g).iter().zip(&g).map(|(c, gk)| c * (-0.25 * gk * t).exp()).collect();
    conditioned(&sum, "psi")
}

/// `(γ(2^ℓ)/4) ∫_0^∞ Ψ_n^{(ℓ)} ds`, integrated termwise; equals 1.
pub fn psi_integral_check(kernel: &dyn Kernel, n: i64, ell: i64) -> Result<f64> {
    if n < ell {
        return Err(Error::InvalidParameter("psi_integral_check requires n ≥ ℓ".into()));
    }
    check_span(n, ell)?;
    let g = chain(kernel, ell, n);
    let sum: CompensatedSum = residue_coefficients(&g).iter().zip(&g).map(|(c, gk)| c * g[0] / gk).collect();
    conditioned(&sum, "psi_integral_check")
}

/// Series `Σ_k c_k^∞ f(γ_k) e^{−γ_k t/4}` with `c_k^∞` the infinite-chain coefficients.
fn infinite_chain_sum(kernel: &dyn Kernel, ell: i64, t: f64, weight: impl Fn(f64) -> f64, what: &str) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("{what} requires t > 0, got {t}")));
    }
    let g_ell = gamma_n(kernel, ell);
    let mut sum = CompensatedSum::new();
    for k in ell.. {
        let gk = gamma_n(kernel, k);
        let decay = -0.25 * gk * t;
        if decay < -745.0 {
            break;
        }
        // ln|c_k^∞| = ln(γ_k/γ_ℓ) − Σ_{j<k} ln(γ_k/γ_j − 1) − Σ_{j>k} ln(1 − γ_k/γ_j)
        let mut ln = (gk / g_ell).ln();
        let mut sign = 1.0;
        for j in ell..k {
            ln -= (gk / gamma_n(kernel, j) - 1.0).ln();
            sign = -sign;
        }
        let mut j = k + 1;
        loop {
            let r = gk / gamma_n(kernel, j);
            ln -= (-r).ln_1p();
            if r < TAIL_TOL * 0.5 {
                break;
            }
            j += 1;
        }
        let term = sign * (ln + decay).exp() * weight(gk);
        sum.add(term);
        if k > ell && term.abs() < 1e-18 * sum.abs_total() {
            break;
        }
        if k - ell > 400 {
            return Err(Error::Convergence(format!("{what}: series did not settle")));
        }
    }
    conditioned(&sum, what)
}

/// `Ψ_∞^{(ℓ)}(t) = lim_{n→∞} Ψ_n^{(ℓ)}(t)`.
pub fn psi_inf(kernel: &dyn Kernel, ell: i64, t: f64) -> Result<f64> {
    infinite_chain_sum(kernel, ell, t, |_| 1.0, "psi_inf")
}

/// `D^β_∞Ψ^{(ℓ)}(t) = lim_{n→∞} 2^{βn}(Ψ_n^{(ℓ)}(t) − Ψ_∞^{(ℓ)}(t))
///  = −(2^β − 1)^{−1} Σ_k (γ_k²/γ_ℓ) Π'_j (1 − γ_k/γ_j)^{−1} e^{−γ_k t/4}`.
pub fn dbeta_psi(kernel: &dyn Kernel, ell: i64, t: f64) -> Result<f64> {
    let s = infinite_chain_sum(kernel, ell, t, |gk| gk, "dbeta_psi")?;
    Ok(-s / (kernel.beta().exp2() - 1.0))
}

/// The σ-free chain on a window `[n_min, n_max]` with boundary value
/// `y_{n_min−1} = λ(t)` and optional source `r(t)`.
pub struct SimplifiedChain<'a> {
    pub window: Window,
    gamma: Vec<f64>,
    lambda: Option<&'a dyn Fn(f64) -> f64>,
    source: Option<&'a dyn Fn(f64, &mut [f64])>,
}

impl<'a> SimplifiedChain<'a> {
    pub fn new(
        kernel: &dyn Kernel,
        window: Window,
        lambda: Option<&'a dyn Fn(f64) -> f64>,
        source: Option<&'a dyn Fn(f64, &mut [f64])>,
    ) -> Self {
        Self { window, gamma: chain(kernel, window.0, window.1), lambda, source }
    }
}

impl TridiagOde for SimplifiedChain<'_> {
    fn dim(&self) -> usize {
        self.gamma.len()
    }
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let ghost = self.lambda.map_or(0.0, |l| l(t));
        for i in 0..y.len() {
            let prev = if i == 0 { ghost } else { y[i - 1] };
            dy[i] = 0.25 * self.gamma[i] * (prev - y[i]);
        }
        if let Some(r) = self.source {
            let mut extra = vec![0.0; y.len()];
            r(t, &mut extra);
            for (d, e) in dy.iter_mut().zip(extra) {
                *d += e;
            }
        }
    }
    fn jacobian(&self, _t: f64, _y: &[f64], jac: &mut Tridiag) {
        for i in 0..self.gamma.len() {
            let g = 0.25 * self.gamma[i];
            jac.diag[i] = -g;
            jac.lower[i] = if i == 0 { 0.0 } else { g };
            jac.upper[i] = 0.0;
        }
    }
}

/// Direct stiff integration of the σ-free chain (the oracle for the closed forms).
pub fn simplified_ode_solve(
    kernel: &dyn Kernel,
    y0: &LatticeSeq,
    lambda: Option<&dyn Fn(f64) -> f64>,
    source: Option<&dyn Fn(f64, &mut [f64])>,
    t_grid: &[f64],
    tol: f64,
) -> Result<Trajectory> {
    check_grid(t_grid)?;
    let sys = SimplifiedChain::new(kernel, y0.window, lambda, source);
    // the chain decays by many orders of magnitude: keep the control essentially relative
    let opts = OdeOptions { rtol: tol, atol: tol * 1e-20, linear: true, index_offset: y0.window.0, ..Default::default() };
    let (raw, _) = integrate(&sys, 0.0, &y0.values, &t_grid[1..], &opts)?;
    let mut states = vec![y0.clone()];
    states.extend(raw.into_iter().map(|v| LatticeSeq { window: y0.window, values: v, theta: y0.theta }));
    let beta = kernel.beta();
    let diagnostics = states.iter().map(|s| Diagnostics::plain(s, beta)).collect();
    Ok(Trajectory { times: t_grid.to_vec(), states, diagnostics })
}

/// Precomputed residue coefficients `C[ℓ][n][k]` on a window.
struct ResidueTable {
    gamma: Vec<f64>,
    /// `coef[l][n - l][k - l]` (indices relative to the window start).
    coef: Vec<Vec<Vec<f64>>>,
}

impl ResidueTable {
    fn new(kernel: &dyn Kernel, window: Window) -> Self {
        let gamma = chain(kernel, window.0, window.1);
        let len = gamma.len();
        let coef = (0..len)
            .map(|l| (l..len).map(|n| residue_coefficients(&gamma[l..=n])).collect())
            .collect();
        Self { gamma, coef }
    }

    /// `Ψ_n^{(ℓ)}(u)` for all `n ≥ ℓ` given `e_k = e^{−γ_k u/4}`; accumulates `scale·Ψ` into `out`.
    fn accumulate(&self, l: usize, e: &[f64], scale: f64, out: &mut [f64]) {
        for (dn, cs) in self.coef[l].iter().enumerate() {
            let v: f64 = cs.iter().zip(&e[l..]).map(|(c, ek)| c * ek).sum();
            out[l + dn] += scale * v;
        }
    }
}

/// Evaluates the Duhamel representation
/// `y_n(t) = (γ(2^{n₀+1})/4)∫_0^t Ψ_n^{(n₀+1)}(t−s)λ(s)ds + Σ_ℓ Ψ_n^{(ℓ)}(t)y⁰_ℓ + ∫_0^t Σ_ℓ Ψ_n^{(ℓ)}(t−s)r_ℓ(s)ds`
/// on a window whose left edge is `n₀ + 1`, using graded Gauss–Legendre
/// quadrature refined until two successive levels agree to `tol`.
pub fn duhamel_solve(
    kernel: &dyn Kernel,
    lambda: &dyn Fn(f64) -> f64,
    source: Option<&dyn Fn(f64, &mut [f64])>,
    y0: &LatticeSeq,
    t_grid: &[f64],
    tol: f64,
) -> Result<Trajectory> {
    check_grid(t_grid)?;
    let window = y0.window;
    if window.1 - window.0 > MAX_SPAN {
        return Err(Error::Precision(format!("window longer than the cap {MAX_SPAN}")));
    }
    let table = ResidueTable::new(kernel, window);
    let len = table.gamma.len();
    let p = kernel.beta() / (kernel.beta() - 1.0);
    let rule = gauss_legendre(8);
    let mut states = vec![y0.clone()];
    for &t in &t_grid[1..] {
        // homogeneous part: exact
        let e_t: Vec<f64> = table.gamma.iter().map(|g| (-0.25 * g * t).exp()).collect();
        let mut base = vec![0.0; len];
        for (l, &y) in y0.values.iter().enumerate() {
            if y != 0.0 {
                table.accumulate(l, &e_t, y, &mut base);
            }
        }
        let forced = |per_octave: usize| {
            let mut acc = vec![0.0; len];
            let mut r = vec![0.0; len];
            let mut e = vec![0.0; len];
            for (u, w) in graded_nodes(t, p, per_octave, 40, &rule) {
                for (ek, g) in e.iter_mut().zip(&table.gamma) {
                    *ek = (-0.25 * g * u).exp();
                }
                let s = t - u;
                table.accumulate(0, &e, 0.25 * table.gamma[0] * lambda(s) * w, &mut acc);
                if let Some(src) = source {
                    r.iter_mut().for_each(|v| *v = 0.0);
                    src(s, &mut r);
                    for (l, &rl) in r.iter().enumerate() {
                        if rl != 0.0 {
                            table.accumulate(l, &e, rl * w, &mut acc);
                        }
                    }
                }
            }
            acc
        };
        let mut prev = forced(1);
        let mut achieved = f64::INFINITY;
        let mut converged = None;
        for per_octave in [2, 4, 8, 16] {
            let next = forced(per_octave);
            let scale = next.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            achieved = prev.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
            prev = next;
            if achieved <= tol {
                converged = Some(prev.clone());
                break;
            }
        }
        let forced = converged.ok_or(Error::Quadrature { achieved })?;
        let values = base.iter().zip(&forced).map(|(a, b)| a + b).collect();
        states.push(LatticeSeq { window, values, theta: y0.theta });
    }
    let beta = kernel.beta();
    let diagnostics = states.iter().map(|s| Diagnostics::plain(s, beta)).collect();
    Ok(Trajectory { times: t_grid.to_vec(), states, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelModel;

    #[test]
    fn default_threshold_is_zero() {
        assert_eq!(check_n0(&KernelModel::default()).unwrap(), 0);
    }

    #[test]
    fn initial_condition_and_causality() {
        let k = KernelModel::default();
        assert_eq!(psi(&k, 3, 3, 0.0).unwrap(), 1.0);
        assert_eq!(psi(&k, 5, 3, 0.0).unwrap(), 0.0);
        assert_eq!(psi(&k, 2, 3, 1.0).unwrap(), 0.0);
        let single = psi(&k, 3, 3, 0.7).unwrap();
        assert!((single - (-0.25 * k.gamma(8.0) * 0.7).exp()).abs() < 1e-15);
    }

    #[test]
    fn normalization_identity() {
        let k = KernelModel::default();
        for d in 0..=10 {
            assert!((psi_integral_check(&k, 1 + d, 1).unwrap() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn span_cap_is_enforced() {
        let k = KernelModel::default();
        assert!(matches!(psi(&k, 30, 1, 1.0), Err(Error::Precision(_))));
    }
}

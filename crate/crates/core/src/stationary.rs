//! Stationary peak profiles on the shifted dyadic lattice.
//!
//! A stationary solution is a sum of Dirac masses `Σ a_n δ(x − n − ρ)` in
//! logarithmic variables. Its coefficients satisfy `a_{n+1} = ζ_n a_n²`, and
//! the rescaled coefficients `α_n = ζ_n a_n / 2` admit the closed form
//!
//! ```text
//! α_n = exp(−A 2^n) · exp(−2^n Σ_{j ≥ n+1} 2^{−j} ln θ_{j−1}),   θ_n = 2 ζ_{n+1}/ζ_n,
//! ```
//!
//! so the whole family is parameterized by the tail parameter `A > 0`. The
//! total mass `M(A)` is strictly decreasing, so each mass has a unique `A_M`.
//!
//! Coefficients decay like `exp(−A 2^n)`, which underflows `f64` after a few
//! dozen indices; profiles therefore keep `ln a_n` and `ln α_n` as the primary
//! representation and expose the linear values (possibly zero) alongside.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{lattice_xi, Kernel};
use crate::numerics::{fit_line, CompensatedSum};

/// Inclusive index window `(n_min, n_max)`.
pub type Window = (i64, i64);

/// Default window of a profile.
pub const DEFAULT_WINDOW: Window = (-40, 16);
/// Relative accuracy required of every truncated mass series.
pub const MASS_TAIL_TOL: f64 = 1e-10;
/// Default tolerance of the Θ series and the inner sums of α_n.
pub const THETA_TOL: f64 = 1e-15;
/// Hard cap on the number of series terms on each side.
const SERIES_CAP: i64 = 4000;

/// `ln ζ_{n,ρ}`, finite for every index.
pub fn ln_zeta(kernel: &dyn Kernel, n: i64, rho: f64) -> f64 {
    let xi = lattice_xi(n, rho);
    std::f64::consts::LN_2.ln() - (n as f64 + rho) * std::f64::consts::LN_2 + kernel.k(xi).ln()
        - kernel.gamma(2.0 * xi).ln()
}

/// `ζ_{n,ρ} = (ln 2 / 2^{n+ρ}) · k(2^{n+ρ}) / γ(2^{n+ρ+1})`.
pub fn zeta(kernel: &dyn Kernel, n: i64, rho: f64) -> f64 {
    let xi = lattice_xi(n, rho);
    std::f64::consts::LN_2 / xi * kernel.k(xi) / kernel.gamma(2.0 * xi)
}

/// `ln θ_{n,ρ}`, evaluated without cancellation:
/// `θ_n = [k(2ξ)/k(ξ)]·[γ(2ξ)/γ(4ξ)]` with `ξ = 2^{n+ρ}`.
pub fn ln_theta(kernel: &dyn Kernel, n: i64, rho: f64) -> f64 {
    let xi = lattice_xi(n, rho);
    kernel.ln_k_ratio(xi) - kernel.ln_gamma_ratio(2.0 * xi)
}

/// `θ_{n,ρ} = 2 ζ_{n+1,ρ} / ζ_{n,ρ}`.
pub fn theta_coeff(kernel: &dyn Kernel, n: i64, rho: f64) -> f64 {
    ln_theta(kernel, n, rho).exp()
}

/// Term `2^{−j} ln θ_{j−1}` of the Θ series.
fn theta_term(kernel: &dyn Kernel, j: i64, rho: f64) -> f64 {
    let l = ln_theta(kernel, j - 1, rho);
    // far left `ln θ` underflows to zero while `2^{−j}` overflows; the exact
    // term is negligible there
    if l == 0.0 {
        0.0
    } else {
        (-(j as f64)).exp2() * l
    }
}

/// Value of `Θ = Σ_j 2^{−j} ln θ_{j−1}` with its certified index range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaSeries {
    pub value: f64,
    /// Smallest index included (`−J₁`).
    pub j_lo: i64,
    /// Largest index included (`J₂`).
    pub j_hi: i64,
    pub tol: f64,
}

/// Smallest index `J₂ ≥ 1` such that the right tail beyond it is below `tol`.
fn right_cutoff(kernel: &dyn Kernel, rho: f64, tol: f64, start: i64) -> Result<i64> {
    let beta_limit = (kernel.alpha() - kernel.beta() + 1.0).abs() * std::f64::consts::LN_2;
    let mut j = start.max(1);
    loop {
        // |ln θ| is bounded by its limit plus a decaying correction; the tail
        // Σ_{i>j} 2^{−i}|ln θ_{i−1}| is at most 2^{−j} times that bound.
        let bound = ln_theta(kernel, j, rho).abs().max(beta_limit) * 1.5;
        if (-(j as f64)).exp2() * bound < tol {
            return Ok(j);
        }
        j += 1;
        if j > SERIES_CAP.min(600) {
            return Err(Error::Convergence(format!("Θ right tail not below {tol:e} by index {j}")));
        }
    }
}

/// Largest index `−J₁ ≤ 0` such that the left tail below it is below `tol`.
fn left_cutoff(kernel: &dyn Kernel, rho: f64, tol: f64) -> Result<i64> {
    let mut j = 0i64;
    let mut prev = theta_term(kernel, j, rho).abs();
    loop {
        j -= 1;
        let cur = theta_term(kernel, j, rho).abs();
        if cur == 0.0 {
            return Ok(j);
        }
        let r = cur / prev;
        if r < 0.99 && j < -4 {
            let tail = cur * r / (1.0 - r);
            if tail < tol {
                return Ok(j);
            }
        }
        prev = cur;
        if -j > SERIES_CAP {
            return Err(Error::Convergence(format!("Θ left tail not below {tol:e} by index {j}")));
        }
    }
}

/// Evaluates Θ with both neglected tails below `tol`.
pub fn theta_series(kernel: &dyn Kernel, rho: f64, tol: f64) -> Result<ThetaSeries> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let j_lo = left_cutoff(kernel, rho, tol)?;
    let j_hi = right_cutoff(kernel, rho, tol, 1)?;
    // sum from the small end on each side
    let mut s = CompensatedSum::new();
    for j in (1..=j_hi).rev() {
        s.add(theta_term(kernel, j, rho));
    }
    for j in j_lo..=0 {
        s.add(theta_term(kernel, j, rho));
    }
    Ok(ThetaSeries { value: s.value(), j_lo, j_hi, tol })
}

/// The A-independent part of a profile on a window:
/// `ln ζ_n` and `ln E_n = −2^n Σ_{j≥n+1} 2^{−j} ln θ_{j−1}`, so that
/// `ln α_n(A) = −A 2^n + ln E_n` and `ln a_n(A) = ln 2 − ln ζ_n + ln α_n(A)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileBasis {
    pub window: Window,
    pub rho: f64,
    pub ln_zeta: Vec<f64>,
    pub ln_e: Vec<f64>,
    pub theta: ThetaSeries,
}

impl ProfileBasis {
    pub fn new(kernel: &dyn Kernel, rho: f64, window: Window) -> Result<Self> {
        let (n_min, n_max) = window;
        if n_max < n_min {
            return Err(Error::InvalidParameter(format!("empty window [{n_min}, {n_max}]")));
        }
        let theta = theta_series(kernel, rho, THETA_TOL)?;
        if n_min < theta.j_lo - 1 - SERIES_CAP || n_max > 500 {
            return Err(Error::Window {
                msg: "window extends past the series cap".into(),
                suggested: DEFAULT_WINDOW,
            });
        }
        let len = (n_max - n_min + 1) as usize;
        let ln_zeta: Vec<f64> = (n_min..=n_max).map(|n| ln_zeta(kernel, n, rho)).collect();
        // suffix sums S_n = Σ_{j ≥ n+1} T_j, accumulated from the right
        let j_hi = right_cutoff(kernel, rho, THETA_TOL * 1e-3, n_max + 1)?;
        let mut acc = CompensatedSum::new();
        for j in ((n_max + 2)..=j_hi).rev() {
            acc.add(theta_term(kernel, j, rho));
        }
        let mut ln_e = vec![0.0; len];
        for n in (n_min..=n_max).rev() {
            acc.add(theta_term(kernel, n + 1, rho));
            let i = (n - n_min) as usize;
            ln_e[i] = -(n as f64).exp2() * acc.value();
        }
        Ok(Self { window, rho, ln_zeta, ln_e, theta })
    }

    fn idx(&self, n: i64) -> usize {
        (n - self.window.0) as usize
    }

    pub fn indices(&self) -> impl Iterator<Item = i64> {
        self.window.0..=self.window.1
    }

    /// `ln α_n(A)`.
    pub fn ln_alpha(&self, n: i64, a: f64) -> f64 {
        -a * (n as f64).exp2() + self.ln_e[self.idx(n)]
    }

    /// `ln a_n(A)`.
    pub fn ln_a(&self, n: i64, a: f64) -> f64 {
        std::f64::consts::LN_2 - self.ln_zeta[self.idx(n)] + self.ln_alpha(n, a)
    }

    /// `ln(2^{n+ρ} a_n(A))`, the log of a mass-series term.
    pub fn ln_mass_term(&self, n: i64, a: f64) -> f64 {
        (n as f64 + self.rho) * std::f64::consts::LN_2 + self.ln_a(n, a)
    }

    /// Windowed mass and estimates of the two neglected tails.
    pub fn mass_with_tails(&self, a: f64) -> (f64, f64, f64) {
        let (n_min, n_max) = self.window;
        let terms: Vec<f64> = self.indices().map(|n| self.ln_mass_term(n, a).exp()).collect();
        let mass = terms.iter().copied().rev().collect::<CompensatedSum>().value();
        // left: terms decay like 4^n, so the tail is about a third of the first term
        let left = terms[0] / 3.0;
        let right = if n_max > n_min {
            let last = terms[terms.len() - 1];
            let r = (self.ln_mass_term(n_max, a) - self.ln_mass_term(n_max - 1, a)).exp();
            if r < 0.5 {
                last * r / (1.0 - r)
            } else {
                f64::INFINITY
            }
        } else {
            f64::INFINITY
        };
        (mass, left, right)
    }
}

/// `α_n(A)` on a window (values may underflow to zero far right).
pub fn alpha_seq(kernel: &dyn Kernel, a: f64, rho: f64, window: Window) -> Result<Vec<f64>> {
    check_a(a)?;
    let basis = ProfileBasis::new(kernel, rho, window)?;
    Ok(basis.indices().map(|n| basis.ln_alpha(n, a).exp()).collect())
}

fn check_a(a: f64) -> Result<()> {
    if a > 0.0 && a.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("A must be positive and finite, got {a}")))
    }
}

/// A stationary peak profile on a finite window.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakProfile {
    pub window: Window,
    pub a_param: f64,
    pub rho: f64,
    /// `ln a_n`.
    pub ln_a: Vec<f64>,
    /// `ln α_n`.
    pub ln_alpha: Vec<f64>,
    /// `a_n` (zero where it underflows).
    pub a: Vec<f64>,
    /// `α_n` (zero where it underflows).
    pub alpha: Vec<f64>,
    /// `ζ_n` on the window.
    pub zeta: Vec<f64>,
    /// Windowed mass `Σ 2^{n+ρ} a_n`.
    pub mass: f64,
    /// Estimated neglected left and right mass tails.
    pub tails: (f64, f64),
    pub theta: f64,
}

impl PeakProfile {
    pub fn indices(&self) -> impl Iterator<Item = i64> {
        self.window.0..=self.window.1
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// `a_n` by lattice index.
    pub fn a_at(&self, n: i64) -> f64 {
        self.a[(n - self.window.0) as usize]
    }

    /// Largest relative residual of `a_{n+1} = ζ_n a_n²` over the pairs where
    /// `a_{n+1}` is a normal `f64` (further right the coefficients underflow
    /// and only the logarithmic representation is meaningful).
    pub fn recurrence_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.len().saturating_sub(1) {
            let next = self.a[i + 1];
            if next < f64::MIN_POSITIVE {
                continue;
            }
            let r = (next - self.zeta[i] * self.a[i] * self.a[i]).abs() / next;
            worst = worst.max(r);
        }
        worst
    }

    /// Largest `|a_{n+1}/a_n − 2α_n|`, in the same representable range.
    pub fn ratio_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.len().saturating_sub(1) {
            if self.a[i + 1] < f64::MIN_POSITIVE {
                continue;
            }
            let r = ((self.ln_a[i + 1] - self.ln_a[i]).exp() - 2.0 * self.alpha[i]).abs();
            worst = worst.max(r);
        }
        worst
    }
}

/// Builds the profile with parameter `A` on an explicit window. Fails with a
/// suggested window when the neglected mass tails exceed the declared tolerance.
pub fn profile_from_a(kernel: &dyn Kernel, a: f64, rho: f64, window: Window) -> Result<PeakProfile> {
    check_a(a)?;
    let basis = ProfileBasis::new(kernel, rho, window)?;
    let (mass, left, right) = basis.mass_with_tails(a);
    if left > MASS_TAIL_TOL * mass || right > MASS_TAIL_TOL * mass {
        let suggested = auto_window(kernel, a, rho)?;
        return Err(Error::Window {
            msg: format!(
                "neglected mass tails {left:.3e} (left), {right:.3e} (right) exceed {MASS_TAIL_TOL:e} of {mass:.6e}"
            ),
            suggested: (suggested.0.min(window.0), suggested.1.max(window.1)),
        });
    }
    Ok(build_profile(&basis, a, mass, (left, right)))
}

fn build_profile(basis: &ProfileBasis, a: f64, mass: f64, tails: (f64, f64)) -> PeakProfile {
    let ln_a: Vec<f64> = basis.indices().map(|n| basis.ln_a(n, a)).collect();
    let ln_alpha: Vec<f64> = basis.indices().map(|n| basis.ln_alpha(n, a)).collect();
    PeakProfile {
        window: basis.window,
        a_param: a,
        rho: basis.rho,
        a: ln_a.iter().map(|v| v.exp()).collect(),
        alpha: ln_alpha.iter().map(|v| v.exp()).collect(),
        zeta: basis.ln_zeta.iter().map(|v| v.exp()).collect(),
        ln_a,
        ln_alpha,
        mass,
        tails,
        theta: basis.theta.value,
    }
}

/// Smallest window containing [`DEFAULT_WINDOW`] whose neglected mass tails
/// are both below a tenth of [`MASS_TAIL_TOL`].
pub fn auto_window(kernel: &dyn Kernel, a: f64, rho: f64) -> Result<Window> {
    check_a(a)?;
    let mut w = DEFAULT_WINDOW;
    for _ in 0..200 {
        let basis = ProfileBasis::new(kernel, rho, w)?;
        let (mass, left, right) = basis.mass_with_tails(a);
        let mut grown = false;
        if left > 0.1 * MASS_TAIL_TOL * mass {
            w.0 -= 5;
            grown = true;
        }
        if right > 0.1 * MASS_TAIL_TOL * mass {
            w.1 += 4;
            grown = true;
        }
        if !grown {
            return Ok(w);
        }
    }
    Err(Error::Convergence(format!("no admissible window found for A = {a}")))
}

/// Profile on the automatically sized window.
pub fn profile_auto(kernel: &dyn Kernel, a: f64, rho: f64) -> Result<PeakProfile> {
    let w = auto_window(kernel, a, rho)?;
    profile_from_a(kernel, a, rho, w)
}

/// `M(A) = Σ 2^{n+ρ+1} ζ_n^{−1} α_n(A)` with relative tail error below 1e-10.
pub fn mass_of(kernel: &dyn Kernel, a: f64, rho: f64) -> Result<f64> {
    let w = auto_window(kernel, a, rho)?;
    let basis = ProfileBasis::new(kernel, rho, w)?;
    Ok(basis.mass_with_tails(a).0)
}

/// Bracket limits of the tail-parameter search.
pub const A_BRACKET: (f64, f64) = (1e-6, 1e6);

/// The unique `A` with `|M(A) − M|/M < tol`, by geometric bracket expansion
/// inside [`A_BRACKET`] followed by bisection on `ln A`.
pub fn solve_a_for_mass(kernel: &dyn Kernel, m: f64, rho: f64, tol: f64) -> Result<f64> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::InvalidParameter(format!("mass must be positive, got {m}")));
    }
    let mass = |a: f64| mass_of(kernel, a, rho);
    // M is decreasing: need M(lo) >= m >= M(hi).
    let (mut lo, mut hi) = (0.5f64, 2.0f64);
    while mass(lo)? < m {
        hi = lo;
        lo /= 8.0;
        if lo < A_BRACKET.0 {
            lo = A_BRACKET.0;
            if mass(lo)? < m {
                return Err(Error::Range(format!("mass {m} exceeds M({:e})", A_BRACKET.0)));
            }
            break;
        }
    }
    while mass(hi)? > m {
        lo = hi;
        hi *= 8.0;
        if hi > A_BRACKET.1 {
            hi = A_BRACKET.1;
            if mass(hi)? > m {
                return Err(Error::Range(format!("mass {m} is below M({:e})", A_BRACKET.1)));
            }
            break;
        }
    }
    let (mut llo, mut lhi) = (lo.ln(), hi.ln());
    for _ in 0..200 {
        let mid = 0.5 * (llo + lhi);
        if mid <= llo || mid >= lhi {
            break;
        }
        if mass(mid.exp())? > m {
            llo = mid;
        } else {
            lhi = mid;
        }
    }
    let a = (0.5 * (llo + lhi)).exp();
    let err = (mass(a)? - m).abs() / m;
    if err < tol {
        Ok(a)
    } else {
        Err(Error::Convergence(format!("bisection reached relative mass error {err:e} > {tol:e}")))
    }
}

/// Least-squares estimates of the two asymptotic laws of a profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    /// Estimate of `lim a_n / 2^n` as n → −∞.
    pub a_minus_inf_hat: f64,
    /// Next-order coefficient in `a_n ≈ a_{−∞}(2^n + A₀ 2^{2n})`.
    pub a0_hat: f64,
    /// Estimate of `lim a_n e^{A 2^n} / 2^{(β−α)n}` as n → ∞.
    pub a_inf_hat: f64,
    /// Decay parameter read off the right tail.
    pub a_hat: f64,
    pub left_residual: f64,
    pub right_residual: f64,
}

/// Fits `ln a_n − n ln 2 ≈ ln a_{−∞} + A₀ 2^n` on the leftmost six indices and
/// `ln a_n − (β−α) n ln 2 ≈ ln a_∞ − A 2^n` on the rightmost six.
pub fn fit_tail_constants(kernel: &dyn Kernel, profile: &PeakProfile) -> Result<TailFit> {
    let (n_min, n_max) = profile.window;
    if n_min > -20 || n_max < 12 {
        return Err(Error::Window {
            msg: "tail fits need a window spanning at least [-20, 12]".into(),
            suggested: (n_min.min(-20), n_max.max(12)),
        });
    }
    let ln2 = std::f64::consts::LN_2;
    let pick = |ns: Vec<i64>, shift: f64| -> (Vec<f64>, Vec<f64>) {
        let x = ns.iter().map(|&n| (n as f64).exp2()).collect();
        let y = ns.iter().map(|&n| profile.ln_a[(n - n_min) as usize] - shift * n as f64 * ln2).collect();
        (x, y)
    };
    let (xl, yl) = pick((n_min..n_min + 6).collect(), 1.0);
    let left = fit_line(&xl, &yl).ok_or_else(|| Error::Degenerate("left tail fit".into()))?;
    let (xr, yr) = pick(((n_max - 5)..=n_max).collect(), kernel.beta() - kernel.alpha());
    let right = fit_line(&xr, &yr).ok_or_else(|| Error::Degenerate("right tail fit".into()))?;
    Ok(TailFit {
        a_minus_inf_hat: left.intercept.exp(),
        a0_hat: left.slope,
        a_inf_hat: right.intercept.exp(),
        a_hat: -right.slope,
        left_residual: left.max_residual,
        right_residual: right.max_residual,
    })
}

/// `a_{−∞} = γ0 2^{ρ+1} / (k0 ln 2)`.
pub fn a_minus_inf(kernel: &dyn Kernel, rho: f64) -> f64 {
    kernel.gamma0() * (rho + 1.0).exp2() / (kernel.k0() * std::f64::consts::LN_2)
}

/// `a_∞ = 2^β 2^{(β−α)(ρ+1)} / ln 2`.
pub fn a_inf(kernel: &dyn Kernel, rho: f64) -> f64 {
    let (a, b) = (kernel.alpha(), kernel.beta());
    b.exp2() * ((b - a) * (rho + 1.0)).exp2() / std::f64::consts::LN_2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelModel;

    fn km() -> KernelModel {
        KernelModel::default()
    }

    #[test]
    fn zeta_at_zero_matches_arithmetic() {
        let expected = std::f64::consts::LN_2 * 2.0 / (1.0 + 2f64.powf(1.5));
        assert!((zeta(&km(), 0, 0.0) / expected - 1.0).abs() < 1e-15);
        assert!((ln_zeta(&km(), 0, 0.0) - expected.ln()).abs() < 1e-15);
    }

    #[test]
    fn theta_limits() {
        let k = km();
        assert!((theta_coeff(&k, -60, 0.0) - 1.0).abs() < 1e-12);
        let lim = (k.alpha - k.beta + 1.0).exp2();
        assert!((theta_coeff(&k, 60, 0.0) / lim - 1.0).abs() < 1e-12);
        let direct = 2.0 * zeta(&k, 1, 0.0) / zeta(&k, 0, 0.0);
        assert!((theta_coeff(&k, 0, 0.0) / direct - 1.0).abs() < 1e-14);
    }

    #[test]
    fn theta_series_is_cauchy_in_tol() {
        let a = theta_series(&km(), 0.0, 1e-10).unwrap();
        let b = theta_series(&km(), 0.0, 1e-11).unwrap();
        assert!((a.value - b.value).abs() < 2e-10);
        assert!(a.j_lo < 0 && a.j_hi > 0);
    }

    #[test]
    fn closed_form_satisfies_alpha_recurrence() {
        let k = km();
        let basis = ProfileBasis::new(&k, 0.0, (-40, 6)).unwrap();
        for n in -40..6 {
            let lhs = basis.ln_alpha(n + 1, 2.0);
            let rhs = ln_theta(&k, n, 0.0) + 2.0 * basis.ln_alpha(n, 2.0);
            assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()), "n={n}");
        }
    }
}

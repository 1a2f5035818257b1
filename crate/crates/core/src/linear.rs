//! The linearized lattice problem around a stationary profile.
//!
//! ```text
//! dy_n/dt = 𝓛_n(y) = (γ(2^n)/4) [ y_{n−1} − y_n − σ_n (y_n − y_{n+1}) ],
//! σ_n = 8 α_n(A_M) γ(2^{n+1}) / γ(2^n).
//! ```
//!
//! Because `a_{n+1}/a_n = 2α_n`, the operator is in flux form with respect to
//! the weights `w_n = 2^{2n} a_n`, so the weighted mean `m̄ = Σ w_n y_n / Σ w_n`
//! is conserved. On a finite window the ghost values copy the boundary values
//! (discrete Neumann closure), which keeps the boundary fluxes zero and `m̄`
//! exactly conserved.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{lattice_xi, Kernel};
use crate::numerics::{fit_line, integrate_with, CompensatedSum, OdeOptions, Tridiag, TridiagOde};
use crate::stationary::{PeakProfile, ProfileBasis, Window};

/// Real sequence on an inclusive index window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeSeq {
    pub window: Window,
    pub values: Vec<f64>,
    /// Weight exponent used when reporting norms.
    pub theta: Option<f64>,
}

impl LatticeSeq {
    /// Checked constructor: length must match the window and values be finite.
    pub fn new(window: Window, values: Vec<f64>) -> Result<Self> {
        let len = window.1 - window.0 + 1;
        if len <= 0 || values.len() as i64 != len {
            return Err(Error::InvalidParameter(format!(
                "window [{}, {}] does not match {} values",
                window.0,
                window.1,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite value at n = {}", window.0 + i as i64)));
        }
        Ok(Self { window, values, theta: None })
    }

    pub fn from_fn(window: Window, f: impl FnMut(i64) -> f64) -> Self {
        Self { window, values: (window.0..=window.1).map(f).collect(), theta: None }
    }

    pub fn constant(window: Window, c: f64) -> Self {
        Self::from_fn(window, |_| c)
    }

    pub fn zeros(window: Window) -> Self {
        Self::constant(window, 0.0)
    }

    /// Kronecker delta at `n0`.
    pub fn delta(window: Window, n0: i64) -> Self {
        Self::from_fn(window, |n| if n == n0 { 1.0 } else { 0.0 })
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = Some(theta);
        self
    }

    pub fn indices(&self) -> impl Iterator<Item = i64> {
        self.window.0..=self.window.1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value at lattice index `n` (must lie in the window).
    pub fn at(&self, n: i64) -> f64 {
        self.values[(n - self.window.0) as usize]
    }

    /// Iterator over `(n, y_n)`.
    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.indices().zip(self.values.iter().copied())
    }

    pub fn map(&self, f: impl Fn(i64, f64) -> f64) -> Self {
        Self { window: self.window, values: self.iter().map(|(n, v)| f(n, v)).collect(), theta: self.theta }
    }

    /// `D⁺_n(y) = y_{n+1} − y_n` on `[n_min, n_max − 1]`.
    pub fn d_plus(&self) -> Self {
        let values = self.values.windows(2).map(|w| w[1] - w[0]).collect();
        Self { window: (self.window.0, self.window.1 - 1), values, theta: None }
    }

    /// `P_n(y) = 2^n y_n`.
    pub fn p(&self) -> Self {
        self.map(|n, v| (n as f64).exp2() * v)
    }

    /// Componentwise maximum absolute difference (same window required).
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.window, other.window, "windows differ");
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// `‖y‖_θ = sup_{n≤0} 2^n |y_n| + sup_{n>0} 2^{θn} |y_n|` over the window.
pub fn norm_theta(y: &LatticeSeq, theta: f64) -> f64 {
    let mut left: f64 = 0.0;
    let mut right: f64 = 0.0;
    for (n, v) in y.iter() {
        if n <= 0 {
            left = left.max((n as f64).exp2() * v.abs());
        } else {
            right = right.max((theta * n as f64).exp2() * v.abs());
        }
    }
    let r = left + right;
    debug_assert!(r.is_finite(), "norm overflow");
    r
}

/// Checks `θ ∈ (−1, β)`, `θ̃ ∈ [θ, β]`, `θ̃ − θ < β`.
pub fn check_theta_pair(theta: f64, theta_tilde: f64, beta: f64) -> Result<()> {
    if theta > -1.0 && theta < beta && theta_tilde >= theta && theta_tilde <= beta && theta_tilde - theta < beta {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "weight exponents (θ, θ̃) = ({theta}, {theta_tilde}) outside the admissible range for β = {beta}"
        )))
    }
}

/// Coefficients of the linear operator on a window.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub window: Window,
    pub a_m: f64,
    pub beta: f64,
    /// Lattice shift used in the γ arguments (zero unless the shifted variant is requested).
    pub rho: f64,
    /// `γ(2^{n+ρ})`.
    pub gamma: Vec<f64>,
    /// `σ_n`.
    pub sigma: Vec<f64>,
    /// Weights `2^{2n} a_n(A_M)` (zero where `a_n` underflows).
    pub weights: Vec<f64>,
    /// `2^{2n} γ(2^{n+1}) a_{n+1}` for `n ∈ [n_min, n_max − 1]` (energy weights).
    pub flux_weights: Vec<f64>,
}

impl LinearModel {
    /// Operator around the ρ = 0 profile with parameter `a_m`.
    pub fn new(kernel: &dyn Kernel, a_m: f64, window: Window) -> Result<Self> {
        Self::with_rho(kernel, a_m, window, 0.0)
    }

    /// Shifted variant: every `2^n` in the rate arguments becomes `2^{n+ρ}`.
    pub fn with_rho(kernel: &dyn Kernel, a_m: f64, window: Window, rho: f64) -> Result<Self> {
        if !(a_m > 0.0) {
            return Err(Error::InvalidParameter(format!("A_M must be positive, got {a_m}")));
        }
        let (n_min, n_max) = window;
        if n_max - n_min < 3 {
            return Err(Error::InvalidParameter("linear window needs at least 4 points".into()));
        }
        let basis = ProfileBasis::new(kernel, rho, (n_min, n_max + 1))?;
        let gamma: Vec<f64> = (n_min..=n_max).map(|n| kernel.gamma(lattice_xi(n, rho))).collect();
        let sigma = (n_min..=n_max)
            .map(|n| {
                8.0 * basis.ln_alpha(n, a_m).exp() * kernel.gamma(lattice_xi(n + 1, rho)) / kernel.gamma(lattice_xi(n, rho))
            })
            .collect();
        let weights = (n_min..=n_max).map(|n| (2.0 * n as f64 * std::f64::consts::LN_2 + basis.ln_a(n, a_m)).exp()).collect();
        let flux_weights = (n_min..n_max)
            .map(|n| {
                (2.0 * n as f64 * std::f64::consts::LN_2 + basis.ln_a(n + 1, a_m)).exp()
                    * kernel.gamma(lattice_xi(n + 1, rho))
            })
            .collect();
        Ok(Self { window, a_m, beta: kernel.beta(), rho, gamma, sigma, weights, flux_weights })
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    /// σ at lattice index `n`.
    pub fn sigma_at(&self, n: i64) -> f64 {
        self.sigma[(n - self.window.0) as usize]
    }

    /// Writes `𝓛(y)` (with Neumann ghosts) into `out`.
    pub fn apply_into(&self, y: &[f64], out: &mut [f64]) {
        let len = y.len();
        for i in 0..len {
            let prev = if i == 0 { y[0] } else { y[i - 1] };
            let next = if i + 1 == len { y[i] } else { y[i + 1] };
            out[i] = 0.25 * self.gamma[i] * ((prev - y[i]) - self.sigma[i] * (y[i] - next));
        }
    }

    /// Tridiagonal matrix of `𝓛` including the closure.
    pub fn matrix(&self) -> Tridiag {
        let len = self.len();
        let mut m = Tridiag::zeros(len);
        for i in 0..len {
            let g = 0.25 * self.gamma[i];
            m.lower[i] = g;
            m.diag[i] = -g * (1.0 + self.sigma[i]);
            m.upper[i] = g * self.sigma[i];
        }
        m.diag[0] += m.lower[0];
        m.lower[0] = 0.0;
        m.diag[len - 1] += m.upper[len - 1];
        m.upper[len - 1] = 0.0;
        m
    }

    /// Weighted mean `m̄` of a sequence on this window.
    pub fn weighted_mean(&self, y: &[f64]) -> f64 {
        let num: CompensatedSum = self.weights.iter().zip(y).map(|(w, v)| w * v).collect();
        let den: CompensatedSum = self.weights.iter().copied().collect();
        num.value() / den.value()
    }

    /// `Σ w_n (y_n − m̄)²`.
    pub fn lyapunov(&self, y: &[f64], mbar: f64) -> f64 {
        self.weights.iter().zip(y).map(|(w, v)| w * (v - mbar) * (v - mbar)).collect::<CompensatedSum>().value()
    }

    /// `Σ 2^{2n} γ(2^{n+1}) a_{n+1} (y_{n+1} − y_n)²`.
    pub fn dissipation(&self, y: &[f64]) -> f64 {
        self.flux_weights
            .iter()
            .zip(y.windows(2))
            .map(|(w, p)| w * (p[1] - p[0]) * (p[1] - p[0]))
            .collect::<CompensatedSum>()
            .value()
    }
}

/// `σ_n = 8 α_n(A_M) γ(2^{n+1})/γ(2^n)` for the ρ = 0 profile.
pub fn sigma(kernel: &dyn Kernel, n: i64, a_m: f64) -> Result<f64> {
    let basis = ProfileBasis::new(kernel, 0.0, (n, n))?;
    Ok(8.0 * basis.ln_alpha(n, a_m).exp() * kernel.gamma(lattice_xi(n + 1, 0.0)) / kernel.gamma(lattice_xi(n, 0.0)))
}

/// `𝓛(y)` with the Neumann closure.
pub fn l_apply(model: &LinearModel, y: &LatticeSeq) -> LatticeSeq {
    assert_eq!(model.window, y.window, "operator and sequence windows differ");
    let mut out = vec![0.0; y.len()];
    model.apply_into(&y.values, &mut out);
    LatticeSeq { window: y.window, values: out, theta: y.theta }
}

/// Weighted mean of `y` with respect to `2^{2n} a_n` of `profile`.
pub fn weighted_mean(y: &LatticeSeq, profile: &PeakProfile) -> Result<f64> {
    let (w, _) = profile_weights(y, profile)?;
    let num: CompensatedSum = w.iter().zip(&y.values).map(|(w, v)| w * v).collect();
    let den: CompensatedSum = w.iter().copied().collect();
    Ok(num.value() / den.value())
}

fn profile_weights(y: &LatticeSeq, profile: &PeakProfile) -> Result<(Vec<f64>, usize)> {
    let (n0, n1) = y.window;
    if n0 < profile.window.0 || n1 > profile.window.1 {
        return Err(Error::InvalidParameter("sequence window must lie inside the profile window".into()));
    }
    let off = (n0 - profile.window.0) as usize;
    let w = y
        .indices()
        .map(|n| (2.0 * n as f64 * std::f64::consts::LN_2 + profile.ln_a[(n - profile.window.0) as usize]).exp())
        .collect();
    Ok((w, off))
}

/// `[Σ w_n (y_n − m̄)²] / [Σ 2^{2n} γ(2^{n+1}) a_{n+1} (y_{n+1} − y_n)²]`.
pub fn poincare_ratio(kernel: &dyn Kernel, y: &LatticeSeq, profile: &PeakProfile) -> Result<f64> {
    let (w, _) = profile_weights(y, profile)?;
    if y.window.1 + 1 > profile.window.1 {
        return Err(Error::InvalidParameter("profile window must extend one index past the sequence".into()));
    }
    let num: CompensatedSum = w.iter().zip(&y.values).map(|(w, v)| w * v).collect();
    let den: CompensatedSum = w.iter().copied().collect();
    let mbar = num.value() / den.value();
    let top: CompensatedSum = w.iter().zip(&y.values).map(|(w, v)| w * (v - mbar) * (v - mbar)).collect();
    let bottom: CompensatedSum = y
        .indices()
        .zip(y.values.windows(2))
        .map(|(n, p)| {
            let a_next = profile.a_at(n + 1);
            (2.0 * n as f64).exp2() * kernel.gamma(lattice_xi(n + 1, profile.rho)) * a_next * (p[1] - p[0]).powi(2)
        })
        .collect();
    if bottom.value() <= 0.0 {
        return Err(Error::Degenerate("discrete gradient vanishes (constant sequence)".into()));
    }
    Ok(top.value() / bottom.value())
}

/// Right-tail limit estimate with its spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrapolation {
    pub value: f64,
    pub spread: f64,
}

/// Richardson estimates `(2^β y_{k+1} − y_k)/(2^β − 1)` for the last three pairs.
fn pair_estimates(y: &LatticeSeq, beta: f64) -> Result<[f64; 3]> {
    let v = &y.values;
    let len = v.len();
    if len < 4 {
        return Err(Error::Extrapolation("need at least 4 values in the window".into()));
    }
    let q = beta.exp2();
    Ok(std::array::from_fn(|i| {
        let k = len - 4 + i;
        (q * v[k + 1] - v[k]) / (q - 1.0)
    }))
}

/// `S_∞` estimate under the model `y_n ≈ y_∞ + c 2^{−βn}`, averaged over the
/// last three index pairs.
pub fn extrapolate_s_inf(y: &LatticeSeq, beta: f64) -> Result<Extrapolation> {
    let est = pair_estimates(y, beta)?;
    let value = (est[0] + est[1] + est[2]) / 3.0;
    let spread = est.iter().fold(f64::NEG_INFINITY, |m, &e| m.max(e)) - est.iter().fold(f64::INFINITY, |m, &e| m.min(e));
    // Spread is compared with the estimate, with a floor at the roundoff level
    // of the tail data so exact-zero limits are not flagged.
    let tail_scale = y.values[y.len() - 4..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if spread > 10.0 * value.abs() + 1e-9 * tail_scale {
        return Err(Error::Extrapolation(format!(
            "right tail does not settle: spread {spread:e} vs estimate {value:e}"
        )));
    }
    Ok(Extrapolation { value, spread })
}

/// `D^β_∞ y = lim 2^{βn}(y_n − y_∞)`, read off the last index pair:
/// `2^{βk}(y_k − y_{k+1})/(1 − 2^{−β})` with `k = n_max − 1`; the spread is
/// taken over the last three pairs.
pub fn d_beta_inf(y: &LatticeSeq, beta: f64) -> Result<Extrapolation> {
    extrapolate_s_inf(y, beta)?;
    let v = &y.values;
    let len = v.len();
    let n_max = y.window.1;
    let d: [f64; 3] = std::array::from_fn(|i| {
        let k = len - 4 + i;
        let n = n_max - 3 + i as i64;
        (beta * n as f64).exp2() * (v[k] - v[k + 1]) / (1.0 - (-beta).exp2())
    });
    Ok(Extrapolation { value: d[2], spread: (d[2] - d[1]).abs() })
}

/// Per-time diagnostics of a linear trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Conserved weighted mean (only for trajectories of 𝓛).
    pub weighted_mean: Option<f64>,
    /// `Σ w_n (y_n − m̄)²` (only for trajectories of 𝓛).
    pub lyapunov: Option<f64>,
    pub norm_0: f64,
    /// Extrapolated right limit, if the tail settled.
    pub s_inf: Option<f64>,
}

impl Diagnostics {
    /// Profile-free diagnostics of a state.
    pub fn plain(y: &LatticeSeq, beta: f64) -> Self {
        Self {
            weighted_mean: None,
            lyapunov: None,
            norm_0: norm_theta(y, 0.0),
            s_inf: extrapolate_s_inf(y, beta).ok().map(|e| e.value),
        }
    }
}

/// Time-stamped states on a shared window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<LatticeSeq>,
    pub diagnostics: Vec<Diagnostics>,
}

impl Trajectory {
    /// Least-squares decay rate of `‖y(t) − m̄‖_0` over grid times in `[t_lo, t_hi]`
    /// (requires the weighted-mean diagnostic).
    pub fn fitted_decay_rate(&self, t_lo: f64, t_hi: f64) -> Option<f64> {
        let mut ts = Vec::new();
        let mut ls = Vec::new();
        for (t, (s, d)) in self.times.iter().zip(self.states.iter().zip(&self.diagnostics)) {
            if *t >= t_lo && *t <= t_hi {
                let mbar = d.weighted_mean?;
                let dev = norm_theta(&s.map(|_, v| v - mbar), 0.0);
                if dev > 0.0 {
                    ts.push(*t);
                    ls.push(dev.ln());
                }
            }
        }
        fit_line(&ts, &ls).map(|f| -f.slope)
    }
}

struct LinearOde<'a> {
    matrix: Tridiag,
    forcing: Option<&'a dyn Fn(f64, &mut [f64])>,
}

impl TridiagOde for LinearOde<'_> {
    fn dim(&self) -> usize {
        self.matrix.len()
    }
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        self.matrix.matvec(y, dy);
        if let Some(f) = self.forcing {
            let mut extra = vec![0.0; y.len()];
            f(t, &mut extra);
            for (d, e) in dy.iter_mut().zip(extra) {
                *d += e;
            }
        }
    }
    fn jacobian(&self, _t: f64, _y: &[f64], jac: &mut Tridiag) {
        jac.clone_from(&self.matrix);
    }
}

pub(crate) fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.first() != Some(&0.0) {
        return Err(Error::InvalidParameter("time grid must start at 0".into()));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("time grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Integration options used by [`evolve`] for a tolerance `tol`: relative
/// control plus an absolute floor shaped like the natural scale of the data,
/// `2^{−n}` on the left and `2^{−βn}` on the right (so that the approach to
/// the right limit is resolved).
pub fn linear_ode_options(model: &LinearModel, y0: &[f64], tol: f64) -> OdeOptions {
    let shape: Vec<f64> = (model.window.0..=model.window.1)
        .map(|n| if n <= 0 { (-(n as f64)).exp2() } else { (-model.beta * n as f64).exp2() })
        .collect();
    let size = y0.iter().zip(&shape).map(|(v, w)| v.abs() / w).fold(0.0, f64::max);
    let size = if size > 0.0 { size } else { 1.0 };
    OdeOptions {
        rtol: tol,
        atol: tol * 1e-3 * size,
        atol_weights: Some(shape),
        linear: true,
        index_offset: model.window.0,
        ..Default::default()
    }
}

/// Solves `dy/dt = 𝓛(y)` (plus optional forcing) at the grid times.
pub fn evolve_forced(
    model: &LinearModel,
    y0: &LatticeSeq,
    t_grid: &[f64],
    opts: &OdeOptions,
    forcing: Option<&dyn Fn(f64, &mut [f64])>,
) -> Result<Trajectory> {
    check_grid(t_grid)?;
    if y0.window != model.window {
        return Err(Error::InvalidParameter("initial datum and operator windows differ".into()));
    }
    let sys = LinearOde { matrix: model.matrix(), forcing };
    let (raw, _) = integrate_with(&sys, 0.0, &y0.values, &t_grid[1..], opts, |_, _| {})?;
    let mut states = Vec::with_capacity(t_grid.len());
    states.push(y0.clone());
    for v in raw {
        states.push(LatticeSeq { window: model.window, values: v, theta: y0.theta });
    }
    let diagnostics = states
        .iter()
        .map(|s| {
            let m = model.weighted_mean(&s.values);
            Diagnostics {
                weighted_mean: Some(m),
                lyapunov: Some(model.lyapunov(&s.values, m)),
                ..Diagnostics::plain(s, model.beta)
            }
        })
        .collect();
    Ok(Trajectory { times: t_grid.to_vec(), states, diagnostics })
}

/// Solves `dy/dt = 𝓛(y)` with relative local error `tol`.
pub fn evolve(model: &LinearModel, y0: &LatticeSeq, t_grid: &[f64], tol: f64) -> Result<Trajectory> {
    let opts = linear_ode_options(model, &y0.values, tol);
    evolve_forced(model, y0, t_grid, &opts, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelModel;

    #[test]
    fn norm_examples() {
        let w = (-5, 5);
        assert_eq!(norm_theta(&LatticeSeq::zeros(w), 1.3), 0.0);
        assert_eq!(norm_theta(&LatticeSeq::delta(w, -3), 1.0), 0.125);
        let y = LatticeSeq::from_fn(w, |n| if n > 0 { (-(n as f64)).exp2() } else { 0.0 });
        assert_eq!(norm_theta(&y, 1.0), 1.0);
    }

    #[test]
    fn extrapolation_on_model_data() {
        let w = (0, 12);
        let y = LatticeSeq::from_fn(w, |n| 0.7 + (-1.5 * n as f64).exp2());
        let e = extrapolate_s_inf(&y, 1.5).unwrap();
        assert!((e.value - 0.7).abs() < 1e-12);
        let d = d_beta_inf(&y, 1.5).unwrap();
        assert!((d.value - 1.0).abs() < 1e-9);
        let c = LatticeSeq::constant(w, -2.0);
        assert_eq!(extrapolate_s_inf(&c, 1.5).unwrap().value, -2.0);
        // pair estimates (1, −1, 0): the mean vanishes while the spread does not
        let q = 1.5f64.exp2();
        let bad = LatticeSeq::new((0, 3), vec![(q - 1.0).powi(2), q - 1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(extrapolate_s_inf(&bad, 1.5), Err(Error::Extrapolation(_))));
    }

    #[test]
    fn theta_pair_validation() {
        assert!(check_theta_pair(0.0, 1.0, 1.5).is_ok());
        assert!(check_theta_pair(-1.0, 1.0, 1.5).is_err());
        assert!(check_theta_pair(0.5, 0.2, 1.5).is_err());
        assert!(check_theta_pair(0.0, 1.6, 1.5).is_err());
    }

    #[test]
    fn matrix_agrees_with_apply() {
        let k = KernelModel::default();
        let m = LinearModel::new(&k, 2.8, (-10, 6)).unwrap();
        let y: Vec<f64> = (0..m.len()).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut a = vec![0.0; y.len()];
        let mut b = vec![0.0; y.len()];
        m.apply_into(&y, &mut a);
        m.matrix().matvec(&y, &mut b);
        for (x, z) in a.iter().zip(&b) {
            assert!((x - z).abs() < 1e-12 * (1.0 + x.abs()));
        }
    }
}

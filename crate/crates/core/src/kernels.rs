//! Coagulation and fragmentation rate functions.
//!
//! The coagulation kernel is concentrated near the diagonal,
//! `K(ξ,η) = k((ξ+η)/2) Q(2η/(ξ+η) − 1) / (ξ+η)`, and fragmentation is binary
//! and symmetric: a particle of size ξ splits into two halves at rate γ(ξ).
//! The canonical model uses `k(ξ) = k0 + ξ^{α+1}`, `γ(ξ) = γ0 + ξ^β` and the
//! parabolic cut-off `Q(s) = max(0, 1 − 9s²)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interface every rate model must provide. Evaluations are pure.
///
/// The provided `ln_*_ratio` methods are used where tiny relative increments
/// of the rates matter (the far-left lattice); models with closed forms should
/// override them with cancellation-free versions.
pub trait Kernel: Send + Sync + std::fmt::Debug {
    /// Exponent α with `k(ξ) ~ ξ^{α+1}` at infinity.
    fn alpha(&self) -> f64;
    /// Exponent β with `γ(ξ) ~ ξ^β` at infinity.
    fn beta(&self) -> f64;
    /// `k(0⁺)`.
    fn k0(&self) -> f64;
    /// `γ(0⁺)`.
    fn gamma0(&self) -> f64;
    /// Default lattice shift.
    fn rho(&self) -> f64;

    /// Coagulation rate k(ξ), ξ > 0.
    fn k(&self, xi: f64) -> f64;
    /// Fragmentation rate γ(ξ), ξ > 0.
    fn gamma(&self, xi: f64) -> f64;
    /// Diagonal cut-off Q(s).
    fn q(&self, s: f64) -> f64;

    /// `ln(k(2ξ)/k(ξ))`.
    fn ln_k_ratio(&self, xi: f64) -> f64 {
        (self.k(2.0 * xi) / self.k(xi)).ln()
    }

    /// `ln(γ(2ξ)/γ(ξ))`.
    fn ln_gamma_ratio(&self, xi: f64) -> f64 {
        (self.gamma(2.0 * xi) / self.gamma(xi)).ln()
    }

    /// Coagulation kernel K(ξ, η).
    fn k_coag(&self, xi: f64, eta: f64) -> f64 {
        let s = xi + eta;
        self.k(0.5 * s) * self.q((eta - xi) / s) / s
    }
}

/// The canonical power-law rate model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelModel {
    pub alpha: f64,
    pub beta: f64,
    pub k0: f64,
    pub gamma0: f64,
    pub rho: f64,
}

impl Default for KernelModel {
    fn default() -> Self {
        Self { alpha: 0.5, beta: 1.5, k0: 1.0, gamma0: 1.0, rho: 0.0 }
    }
}

fn check_positive(xi: f64, what: &str) -> Result<()> {
    if xi > 0.0 && xi.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} requires a positive finite argument, got {xi}")))
    }
}

impl KernelModel {
    /// Validated constructor.
    pub fn new(alpha: f64, beta: f64, k0: f64, gamma0: f64, rho: f64) -> Result<Self> {
        let m = Self { alpha, beta, k0, gamma0, rho };
        m.validate()?;
        Ok(m)
    }

    /// Checks the admissible parameter ranges.
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, v: f64, range: &str| {
            Err(Error::InvalidParameter(format!("{name} = {v} must lie in {range}")))
        };
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha", self.alpha, "(0, 1)");
        }
        if !(self.beta > 1.0 && self.beta < 2.0) {
            return bad("beta", self.beta, "(1, 2)");
        }
        if !(self.k0 > 0.0 && self.k0.is_finite()) {
            return bad("k0", self.k0, "(0, ∞)");
        }
        if !(self.gamma0 > 0.0 && self.gamma0.is_finite()) {
            return bad("gamma0", self.gamma0, "(0, ∞)");
        }
        if !(self.rho >= 0.0 && self.rho < 1.0) {
            return bad("rho", self.rho, "[0, 1)");
        }
        Ok(())
    }

    /// Same model with another lattice shift.
    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    /// Checked k(ξ).
    pub fn k_rate(&self, xi: f64) -> Result<f64> {
        check_positive(xi, "k_rate")?;
        Ok(self.k(xi))
    }

    /// Checked γ(ξ).
    pub fn gamma_rate(&self, xi: f64) -> Result<f64> {
        check_positive(xi, "gamma_rate")?;
        Ok(self.gamma(xi))
    }

    /// Q(s) (total function).
    pub fn cutoff_q(&self, s: f64) -> f64 {
        self.q(s)
    }

    /// Checked K(ξ, η).
    pub fn coag_kernel(&self, xi: f64, eta: f64) -> Result<f64> {
        check_positive(xi, "K_coag")?;
        check_positive(eta, "K_coag")?;
        Ok(self.k_coag(xi, eta))
    }
}

impl Kernel for KernelModel {
    fn alpha(&self) -> f64 {
        self.alpha
    }
    fn beta(&self) -> f64 {
        self.beta
    }
    fn k0(&self) -> f64 {
        self.k0
    }
    fn gamma0(&self) -> f64 {
        self.gamma0
    }
    fn rho(&self) -> f64 {
        self.rho
    }

    fn k(&self, xi: f64) -> f64 {
        self.k0 + xi.powf(self.alpha + 1.0)
    }

    fn gamma(&self, xi: f64) -> f64 {
        self.gamma0 + xi.powf(self.beta)
    }

    fn q(&self, s: f64) -> f64 {
        (1.0 - 9.0 * s * s).max(0.0)
    }

    fn ln_k_ratio(&self, xi: f64) -> f64 {
        let a = self.alpha + 1.0;
        ((a.exp2() - 1.0) / (1.0 + self.k0 * xi.powf(-a))).ln_1p()
    }

    fn ln_gamma_ratio(&self, xi: f64) -> f64 {
        let b = self.beta;
        ((b.exp2() - 1.0) / (1.0 + self.gamma0 * xi.powf(-b))).ln_1p()
    }
}

/// Lattice point `2^{n+ρ}`.
#[inline]
pub fn lattice_xi(n: i64, rho: f64) -> f64 {
    (n as f64 + rho).exp2()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_values() {
        let m = KernelModel::default();
        assert_eq!(m.k_rate(1.0).unwrap(), 2.0);
        assert_eq!(m.gamma_rate(4.0).unwrap(), 9.0);
        assert_eq!(m.cutoff_q(0.0), 1.0);
        assert!((m.cutoff_q(1.0 / 6.0) - 0.75).abs() < 1e-15);
        assert_eq!(m.cutoff_q(1.0 / 3.0), 0.0);
        assert_eq!(m.cutoff_q(-1.0 / 3.0), 0.0);
    }

    #[test]
    fn domain_errors() {
        let m = KernelModel::default();
        assert!(matches!(m.k_rate(0.0), Err(Error::Domain(_))));
        assert!(matches!(m.gamma_rate(-1.0), Err(Error::Domain(_))));
        assert!(matches!(m.coag_kernel(1.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn validation_rejects_out_of_range() {
        assert!(KernelModel::new(0.5, 2.5, 1.0, 1.0, 0.0).is_err());
        assert!(KernelModel::new(1.0, 1.5, 1.0, 1.0, 0.0).is_err());
        assert!(KernelModel::new(0.5, 1.5, 1.0, 1.0, 1.0).is_err());
        assert!(KernelModel::new(0.5, 1.5, 0.0, 1.0, 0.0).is_err());
        assert!(KernelModel::new(0.5, 1.5, 1.0, 1.0, 0.5).is_ok());
    }

    #[test]
    fn accurate_log_ratios_match_naive_where_safe() {
        let m = KernelModel::default();
        for &xi in &[0.1, 1.0, 3.0, 100.0] {
            let naive_k = (m.k(2.0 * xi) / m.k(xi)).ln();
            let naive_g = (m.gamma(2.0 * xi) / m.gamma(xi)).ln();
            assert!((m.ln_k_ratio(xi) - naive_k).abs() < 1e-14);
            assert!((m.ln_gamma_ratio(xi) - naive_g).abs() < 1e-14);
        }
        // far left: relative accuracy where the naive form has none
        let xi = 2f64.powi(-60);
        let expected = (2f64.powf(1.5) - 1.0) * xi.powf(1.5);
        assert!((m.ln_k_ratio(xi) / expected - 1.0).abs() < 1e-12);
    }
}

//! Run configuration: a flat JSON object; unknown keys are rejected.
//!
//! Every key is optional. Command-specific defaults apply where a key is
//! absent (see `config.schema.json` for units and defaults).

use std::path::Path;

use cfpeaks::{KernelModel, Window};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub alpha: f64,
    pub beta: f64,
    pub k0: f64,
    pub gamma0: f64,
    /// Lattice shift ρ.
    pub rho: f64,
    /// Shifts swept by `stationary` (defaults to `[rho]`).
    pub rho_values: Option<Vec<f64>>,
    /// Total mass M.
    pub mass: f64,
    /// Masses swept by `stationary` (defaults to `[mass]`).
    pub masses: Option<Vec<f64>>,
    /// Tail parameter A; overrides `mass` in `stationary`.
    pub a_param: Option<f64>,
    pub window_min: Option<i64>,
    pub window_max: Option<i64>,
    /// Integration / fixed-point tolerance.
    pub tol: Option<f64>,
    /// Time horizon.
    pub t_end: Option<f64>,
    /// Output spacing of uniform time grids.
    pub dt: Option<f64>,
    /// Perturbation amplitude.
    pub amplitude: Option<f64>,
    /// Number of random trajectories (`linear-decay`).
    pub trajectories: usize,
    /// Source indices ℓ (`fundsol-check`); default `n₀ + 1` and `n₀ + 3`.
    pub ell_values: Option<Vec<i64>>,
    /// Number of lattice points after ℓ compared (`fundsol-check`).
    pub fundsol_span: i64,
    /// Evaluation times (`fundsol-check`).
    pub fundsol_times: Vec<f64>,
    /// Decay rate ν of the fixed-point envelope (fitted when absent).
    pub nu: Option<f64>,
    /// Admissibility radius δ₀ of the fixed-point construction.
    pub delta0: f64,
    /// Truncation radius R (`measure-evolve`).
    pub radius: f64,
    /// `lattice` (atoms on the peak lattice) or `cells` (`measure-evolve`).
    pub measure_mode: MeasureMode,
    /// Cells per unit of log₂-mass.
    pub kappa: usize,
    /// Moment exponent θ of the a-priori bounds.
    pub theta: f64,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureMode {
    Lattice,
    Cells,
}

impl Default for RunConfig {
    fn default() -> Self {
        let k = KernelModel::default();
        Self {
            alpha: k.alpha,
            beta: k.beta,
            k0: k.k0,
            gamma0: k.gamma0,
            rho: k.rho,
            rho_values: None,
            mass: 1.0,
            masses: None,
            a_param: None,
            window_min: None,
            window_max: None,
            tol: None,
            t_end: None,
            dt: None,
            amplitude: None,
            trajectories: 20,
            ell_values: None,
            fundsol_span: 8,
            fundsol_times: vec![0.1, 1.0, 5.0],
            nu: None,
            delta0: 1e-2,
            radius: 40.0,
            measure_mode: MeasureMode::Lattice,
            kappa: cfpeaks::measures::DEFAULT_KAPPA,
            theta: cfpeaks::measures::DEFAULT_THETA,
            seed: None,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{name} must be positive and finite, got {v}")))
    }
}

impl RunConfig {
    /// Reads and validates a configuration file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Range checks performed before any computation.
    pub fn validate(&self) -> Result<(), CliError> {
        self.kernel()?;
        for rho in self.rho_list() {
            KernelModel { rho, ..self.kernel()? }.validate()?;
        }
        for m in self.mass_list() {
            positive("mass", m)?;
        }
        if let Some(a) = self.a_param {
            positive("a_param", a)?;
        }
        for (name, v) in [("tol", self.tol), ("t_end", self.t_end), ("dt", self.dt), ("amplitude", self.amplitude), ("nu", self.nu)] {
            if let Some(v) = v {
                positive(name, v)?;
            }
        }
        if let (Some(lo), Some(hi)) = (self.window_min, self.window_max) {
            if hi <= lo {
                return Err(CliError::Validation(format!("window [{lo}, {hi}] is empty")));
            }
        }
        positive("delta0", self.delta0)?;
        if !(self.theta > self.beta + 1.0 && self.theta.is_finite()) {
            return Err(CliError::Validation(format!("theta must exceed beta + 1 = {}, got {}", self.beta + 1.0, self.theta)));
        }
        if !(self.radius > 1.0 && self.radius.is_finite()) {
            return Err(CliError::Validation(format!("radius must exceed 1, got {}", self.radius)));
        }
        if self.kappa == 0 {
            return Err(CliError::Validation("kappa must be at least 1".into()));
        }
        if self.trajectories == 0 {
            return Err(CliError::Validation("trajectories must be at least 1".into()));
        }
        if self.fundsol_span < 0 || self.fundsol_span > cfpeaks::fundsol::MAX_SPAN {
            return Err(CliError::Validation(format!("fundsol_span must lie in [0, {}]", cfpeaks::fundsol::MAX_SPAN)));
        }
        for t in &self.fundsol_times {
            positive("fundsol_times entry", *t)?;
        }
        Ok(())
    }

    pub fn kernel(&self) -> Result<KernelModel, CliError> {
        Ok(KernelModel::new(self.alpha, self.beta, self.k0, self.gamma0, self.rho)?)
    }

    pub fn rho_list(&self) -> Vec<f64> {
        self.rho_values.clone().unwrap_or_else(|| vec![self.rho])
    }

    pub fn mass_list(&self) -> Vec<f64> {
        self.masses.clone().unwrap_or_else(|| vec![self.mass])
    }

    /// Configured window, or `default` where a bound is absent.
    pub fn window_or(&self, default: Window) -> Window {
        (self.window_min.unwrap_or(default.0), self.window_max.unwrap_or(default.1))
    }

    /// Uniform grid `0, dt, …, t_end`.
    pub fn time_grid(&self, t_end: f64, dt: f64) -> Vec<f64> {
        let t_end = self.t_end.unwrap_or(t_end);
        let dt = self.dt.unwrap_or(dt);
        let steps = (t_end / dt).round().max(1.0) as usize;
        (0..=steps).map(|i| t_end * i as f64 / steps as f64).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_json(r#"{"betta": 1.5}"#), Err(CliError::Validation(_))));
        assert!(RunConfig::from_json(r#"{"beta": 1.5, "mass": 2}"#).is_ok());
    }

    #[test]
    fn ranges_are_checked() {
        assert!(matches!(RunConfig::from_json(r#"{"beta": 2.5}"#), Err(CliError::Validation(_))));
        assert!(matches!(RunConfig::from_json(r#"{"rho_values": [0, 1.2]}"#), Err(CliError::Validation(_))));
        assert!(matches!(RunConfig::from_json(r#"{"mass": -1}"#), Err(CliError::Validation(_))));
    }
}

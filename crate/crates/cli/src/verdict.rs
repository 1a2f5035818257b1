//! Machine-readable pass/fail records.

use serde::{Deserialize, Serialize};

/// How a measured value is compared with its tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `measured < tolerance`.
    Below,
    /// `measured > tolerance`.
    Above,
    /// `tolerance.0 ≤ measured ≤ tolerance.1`.
    Within(f64, f64),
}

/// One assertion with its tolerance and measured value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub relation: Relation,
    pub passed: bool,
}

impl Check {
    pub fn below(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self { name: name.into(), measured, tolerance, relation: Relation::Below, passed: measured < tolerance }
    }

    pub fn above(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self { name: name.into(), measured, tolerance, relation: Relation::Above, passed: measured > tolerance }
    }

    pub fn within(name: impl Into<String>, measured: f64, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance: hi,
            relation: Relation::Within(lo, hi),
            passed: measured >= lo && measured <= hi,
        }
    }

    /// A boolean property, recorded as measured 1 (true) or 0 (false).
    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Self {
            name: name.into(),
            measured: if ok { 1.0 } else { 0.0 },
            tolerance: 0.5,
            relation: Relation::Above,
            passed: ok,
        }
    }
}

/// Verdict of one subcommand run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub command: String,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl Verdict {
    pub fn new(command: &str, seed: u64, checks: Vec<Check>) -> Self {
        let passed = checks.iter().all(|c| c.passed);
        Self { command: command.to_string(), seed, passed, checks }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

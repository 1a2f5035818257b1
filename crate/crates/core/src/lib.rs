//! Stationary Dirac-peak solutions of a coagulation–fragmentation equation with
//! diagonal kernels, and the tools to study their stability.
//!
//! Modules, bottom-up:
//! - [`kernels`]: rate functions `k`, `γ`, the cut-off `Q` and the kernel `K`.
//! - [`stationary`]: the two-parameter family of stationary peak profiles,
//!   the mass map `A ↦ M(A)` and its inverse.
//! - [`linear`]: the linearized lattice operator, its semigroup and limits.
//! - [`fundsol`]: closed-form fundamental solutions of the σ-free system.
//! - [`peaks`]: nonlinear peak dynamics, perturbation decomposition and the
//!   fixed-point scheme for the tail parameter `A(t)`.
//! - [`measures`]: measures on logarithmic grids, weak-form operators and the
//!   truncated mild-solution solver.

pub mod error;
pub mod fundsol;
pub mod io;
pub mod kernels;
pub mod linear;
pub mod measures;
pub mod numerics;
pub mod peaks;
pub mod stationary;

pub use error::{Error, Result};
pub use kernels::{Kernel, KernelModel};
pub use linear::{LatticeSeq, LinearModel, Trajectory};
pub use measures::GridMeasure;
pub use peaks::PeakState;
pub use stationary::{PeakProfile, Window};

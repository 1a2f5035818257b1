//! Numerical building blocks shared by the model modules.

pub mod fit;
pub mod ode;
pub mod quad;
pub mod sum;
pub mod tridiag;

pub use fit::{fit_line, LineFit};
pub use quad::{composite, gauss_legendre, graded_nodes};
pub use ode::{integrate, integrate_with, OdeOptions, OdeStats, TridiagOde};
pub use sum::{ksum, CompensatedSum};
pub use tridiag::Tridiag;

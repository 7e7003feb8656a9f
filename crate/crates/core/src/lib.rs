//! Numerical laboratory for stochastic reaction–diffusion equations on `[0, 1]`
//! driven by multiplicative space-time white noise.
//!
//! The crate simulates the mild form
//!
//! ```text
//! u(t,x) = P_t u0(x) + ∫∫ p_{t-s}(x,y) b(u(s,y)) ds dy + ∫∫ p_{t-s}(x,y) σ(u(s,y)) W(ds,dy)
//! ```
//!
//! for the Dirichlet half-Laplacian, evaluates the explicit constants of the
//! uniform-norm moment estimates for stochastic convolutions and of the quadratic
//! transportation cost inequality, and checks every inequality one-sidedly
//! against Monte Carlo ensembles.
//!
//! Module map:
//!
//! * [`heat_kernel`]: Dirichlet heat kernel, semigroup, kernel matrices and the sine basis.
//! * [`noise`]: Brownian-sheet increments, Girsanov shift, density, relative entropy.
//! * [`solver`]: mild time stepping and the synchronously coupled pair.
//! * [`convolution`]: direct stochastic convolution and the factorization operators.
//! * [`constants`]: every explicit constant, evaluated in log-space.
//! * [`estimators`]: Monte Carlo estimators and one-sided verification reports.

pub mod constants;
pub mod convolution;
pub mod ensemble;
pub mod error;
pub mod estimators;
pub mod grid;
pub mod heat_kernel;
pub mod noise;
pub mod quadrature;
pub mod report;
pub mod scenario;
pub mod solver;

pub use error::{Error, Result};
pub use grid::SpaceTimeGrid;
pub use report::VerificationReport;

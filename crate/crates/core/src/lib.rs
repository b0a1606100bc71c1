//! Tail probabilities for the maximum of a smooth Gaussian random field
//! defined on a closed submanifold of the unit sphere, where the field is
//! allowed a location-dependent scale.
//!
//! The field has the form `X(u) = sigma(u) * <u, xi>` with `xi` standard
//! normal in `R^n` and `u` ranging over a `d`-dimensional parameter manifold
//! `M` embedded in the unit sphere `S^{n-1}`, `d < n - 1`. The crate
//! computes:
//!
//! - the volume-of-tube expansion of `P(max X > c)` (module [`tube`]),
//!   including the exact finite-form expansion for the normalized field
//!   `Y(u) = sigma(u) * <u, xi/|xi|>`;
//! - the critical threshold `b_cri` above which the expansion is exact for
//!   `Y` (module [`critical`]), together with supporting-point and
//!   integration-domain diagnostics;
//! - Laplace-type approximations of the dominant tail term (in [`tube`]);
//! - the specialization to finite Gaussian vectors, where the expansion
//!   collapses to a Bonferroni-type sum (module [`bonferroni`]);
//! - Monte Carlo reference simulations (module [`montecarlo`]).
//!
//! Geometry of the parameter manifold (metric, connection, curvature, and
//! the scale-correction matrix entering the tube integrand) is handled by
//! [`geometry`], with ready-made models in [`models`]: a scaled projection
//! process on a circle, largest-eigenvalue models for 2x2 and pxp Wishart
//! matrices, a flat torus, and custom models defined by expressions in a
//! config file.

pub mod bonferroni;
pub mod critical;
pub mod error;
pub mod geometry;
pub mod models;
pub mod montecarlo;
pub mod optim;
pub mod quad;
pub mod specfun;
pub mod tube;

pub use error::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

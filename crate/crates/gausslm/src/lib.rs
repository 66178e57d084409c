//! Numerical verification of sharp moment and entropy inequalities for
//! log-concave and log-convex functions of Gaussian random vectors.
//!
//! The crate builds the geometric objects the inequalities live on —
//! spherico-regular simplex frames, equiangular correlation frames and
//! their identity decompositions, block-constant covariances — and
//! evaluates every functional involved (power means, scaled means,
//! entropy, Dirichlet and Stein terms, correlated product means) through
//! three backends: closed forms on a Gaussian-exponential oracle family,
//! tensorized Gauss–Hermite quadrature, and batched Monte Carlo. Each
//! inequality check returns an error-qualified verdict; sweeps aggregate
//! verdicts into machine-readable reports.

pub mod catalog;
pub mod error;
pub mod estimate;
pub mod frames;
pub mod functions;
pub mod gaussian;
pub mod linalg;
pub mod quadrature;
pub mod sweep;
pub mod verify;

pub use error::{Error, Result};

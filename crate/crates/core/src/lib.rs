//! Homogenization toolkit for weakly coupled Fokker-Planck systems on a
//! periodic environment (molecular-motor ratchet models).
//!
//! The library computes, for a two-species drift-diffusion system with stiff
//! conformation switching, the effective Hamiltonian `Hbar(p)` via the
//! principal eigenvalue of the periodic cell problem, its gradient, the
//! Legendre transform `Hstar`, and the transport velocity `vbar = DHbar(0)`.
//! A mass-conservative simulator of the eps-scaled system verifies by direct
//! computation that the densities concentrate and travel at `vbar`.
//!
//! Module map:
//! - [`model`]: periodic coefficient fields, model assembly, named presets
//! - [`cell`]: discrete cell problem, Perron eigenpairs, `Hbar(p)` and `DHbar(p)`
//! - [`effective`]: momentum sweeps, convexity/coercivity certificates,
//!   Legendre transform, Hopf-Lax profiles
//! - [`fokker_planck`]: finite-volume simulator with exact reaction splitting
//! - [`experiments`]: transport, multi-bump, rate-profile and Harnack studies

pub mod cell;
pub mod defaults;
pub mod effective;
mod error;
pub mod experiments;
pub mod fokker_planck;
pub mod model;
pub mod output;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

//! Multi-bubble approximate solutions of the critical Lane–Emden system
//! -Δu = K₁(|y|/μ) v^p, -Δv = K₂(|y|/μ) u^q in R^N.
//!
//! The crate builds the radial ground state, assembles polygonal bubble
//! configurations, evaluates the energy and its reduced expansion, runs the
//! projected linear solve and contraction of the reduction, and checks the
//! local Pohozaev identities numerically.

pub mod ansatz;
pub mod config;
pub mod energy;
pub mod error;
pub mod fit;
pub mod grid;
pub mod ground_state;
pub mod krylov;
pub mod pohozaev;
pub mod quadrature;
pub mod reduction;
pub mod sector;

pub use error::{Error, ErrorKind, Result};

//! Noise-induced (anti)synchronization in the transverse-field XY chain.
//!
//! The chain `H0 = (J/2) sum_j (X_j X_{j+1} + Y_j Y_{j+1}) + h sum_j Z_j` is
//! driven by classical Gaussian white noise coupled to `sigma^z` on one or two
//! sites. The crate provides
//!
//! * closed-form first-order decay constants and the synchronization
//!   condition ([`perturbation`]),
//! * the noise-averaged dynamics of the Jordan–Wigner correlation matrix and
//!   its Liouvillian spectrum ([`evolve`]),
//! * stochastic trajectories of single noise realizations ([`trajectories`]),
//! * a brute-force density-matrix oracle for short chains ([`reference`]),
//! * synchronization and entanglement observables ([`diagnostics`]),
//! * rate sweeps, optimal-noise search and the scaling fit ([`sweep`]).
//!
//! Energies are in units of `J`, times in `tau = J t`, and every site or mode
//! label in the public API is 1-based.

pub mod error;
pub mod linalg;
pub mod model;
pub mod perturbation;
pub mod evolve;
pub mod trajectories;
pub mod sweep;
pub mod reference;
pub mod diagnostics;

pub use error::{Error, ErrorKind, Result};
pub use model::{ChainSpec, InitialState, NoiseSpec};

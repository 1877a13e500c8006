//! Exact and Monte Carlo analysis of hitting times of increasing patterns in
//! the symmetric simple exclusion process on finite boxes of `Z^d`.
//!
//! The crate is organised bottom-up:
//!
//! - [`lattice`]: boxes, packed configurations, threshold patterns, the order.
//! - [`harmonic`]: random-walk hitting probabilities and the weights `γ`, `α`.
//! - [`generators`]: transition rates of every model, its dual and transforms.
//! - [`exact`]: enumeration-based spectra, semigroups and certificates.
//! - [`montecarlo`]: Gillespie simulation, estimators and couplings.
//! - [`hprocess`]: the Doob transform by the principal eigenfunction.

pub mod error;
pub mod exact;
pub mod flow;
pub mod generators;
pub mod harmonic;
pub mod hprocess;
pub mod lattice;
pub mod montecarlo;

pub use error::{Error, Result};

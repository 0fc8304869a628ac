//! Numerical tools for one-dimensional Schrödinger operators with random
//! single-site couplings: Prüfer phase integration, spectral counting,
//! the unit-cell integral operators of the localization argument, and
//! Monte-Carlo correlator estimates.

pub mod correlator;
pub mod error;
pub mod identities;
pub mod ksop;
pub mod model;
pub mod ode;
pub mod prufer;
pub mod quad;
pub mod roots;
pub mod scenario;
pub mod spectral;

pub use error::{Error, Result};

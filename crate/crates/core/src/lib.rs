//! Uncertainty quantification for the mono-energetic 1D slab-geometry
//! neutron transport equation with log-normal random scattering
//! cross-sections.
//!
//! The chain: sample the scattering cross-section through a truncated
//! Karhunen-Loève expansion of a Matérn-covariance Gaussian field
//! ([`covariance`]), drive it with pseudo-random or randomly-shifted
//! rank-1 lattice points ([`sampler`]), discretise each realisation by
//! diamond differencing with double-Gauss angular quadrature and solve it
//! directly, iteratively or with the hybrid rule ([`transport`]), and
//! estimate expectations of the flux integral with MC, QMC, MLMC or MLQMC
//! estimators with adaptive sample allocation ([`estimators`]).
//! [`studies`] packages the recurring experiment designs (solver cost,
//! bias/variance decay, estimator convergence, epsilon-cost comparison).

pub mod covariance;
pub mod error;
pub mod estimators;
pub mod sampler;
pub mod studies;
pub mod transport;

#[cfg(feature = "test-oracles")]
pub mod oracles;

pub use error::{Error, Result};

//! Pilot-wave particle dynamics on a discrete space-time lattice.
//!
//! Each pair of consecutive lines behind a diaphragm gets the stochastic
//! matrix that minimizes the ensemble-averaged action between the two
//! `|Ψ|²` site distributions. Chaining those matrices gives a Markov process
//! whose sampled trajectories reproduce the quantum distributions line by
//! line.
//!
//! Modules, bottom-up:
//! - [`lattice`]: grids, time parameters, normalized distributions.
//! - [`wavefield`]: Fresnel integrals and the slit wavefunction.
//! - [`transport`]: minimal stochastic matrices, action, Wasserstein metrics,
//!   and an exact LP oracle.
//! - [`markov`]: chain assembly, trajectory sampling, path probabilities.
//! - [`analysis`]: crossing checks, transition nets, histograms.

pub mod analysis;
pub mod error;
pub mod lattice;
pub mod markov;
mod numeric;
pub mod transport;
pub mod wavefield;

pub use error::{Error, Result};
pub use numeric::compensated_sum;

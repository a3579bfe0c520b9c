//! Simulation and analysis of a driven quantum dot in a polarization
//! degenerate microcavity: steady states of the two-polarization
//! Jaynes–Cummings master equation, polarization post-selected transmission,
//! photon correlations and photon-number statistics, parameter sweeps and
//! transmission fitting.

pub mod cli;
pub mod config;
pub mod error;
pub mod fit;
pub mod hilbert;
pub mod model;
pub mod observables;
pub mod solver;
pub mod sparse;
pub mod sweeps;

pub use error::{Error, Result};
pub use hilbert::{Operator, Polarization, SpaceLayout};
pub use model::{build_hamiltonian, build_liouvillian, cooperativity, JonesVector, Liouvillian, SystemParams};
pub use solver::{steady_state, DensityMatrix, PropagationSpec, SteadyState};

//! Simulation of spin-photon linear-cluster-state generation from a
//! quantum-dot spin in a cavity: conditional master-equation dynamics with
//! photon-number decomposition, Overhauser-field Monte-Carlo averaging,
//! polarization-correlation experiments, process-map extraction, entanglement
//! fidelity bounds, rate budgets, and a synthetic time-tag pipeline.

pub mod bounds;
pub mod correlation;
pub mod dynamics;
pub mod error;
pub mod fit;
pub mod linalg;
pub mod model;
pub mod overhauser;
pub mod process;
pub mod rates;
pub mod timetag;

pub use error::{Error, Result};

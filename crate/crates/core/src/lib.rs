//! Simulator of atomic-state teleportation by interference of photons
//! leaked from two driven cavities.
//!
//! Module layout follows the physical chain: [`pulses`] builds drive
//! envelopes and closed-form photon modes, [`atom_cavity`] the two
//! Hamiltonians, [`evolution`] integrates them, [`bsm`] interferes the photons
//! and [`protocol`] ties everything into a teleportation run.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod atom_cavity;
pub mod bsm;
pub mod csvio;
pub mod error;
pub mod evolution;
pub mod protocol;
pub mod pulses;
pub mod quadrature;
pub mod quantum;

pub use atom_cavity::{Channel, Qubit, SystemParams};
pub use bsm::{DetectionModel, DetectorPattern, OutcomeClass};
pub use error::{Error, Result};
pub use evolution::EvolutionConfig;
pub use protocol::{fidelity_formula, run_teleportation, ProtocolConfig, ProtocolMode, ProtocolReport};
pub use pulses::{CgTable, GaussianConvention, PhotonMode, PulseConfig, TimeGrid};
pub use quantum::{DensityOperator, HilbertSpace, Operator, StateVector, C64};

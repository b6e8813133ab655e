//! Steady-state entanglement in dissipative cavity/qubit arrays.
//!
//! The library builds the four array models (chain/star geometries of
//! cavities and qubits with a single lossy central element), assembles
//! their Lindblad generators, solves for steady states and Liouvillian
//! spectra, evolves states by master equation or quantum trajectories,
//! and quantifies pairwise entanglement through the Wootters concurrence.

extern crate blas_src;

pub mod error;
pub mod dynamics;
pub mod entanglement;
pub mod hilbert;
pub mod liouvillian;
pub mod model;
pub mod sparse;

pub use error::{Error, Result};

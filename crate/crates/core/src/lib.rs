//! Simulation of a periodically kicked random Ising chain (a discrete time
//! crystal) whose spins radiate into waveguides terminated by mirrors, so
//! emitted photons return after a delay and interfere with the chain.
//!
//! The reservoirs are represented in a time-bin basis. Each spin owns a
//! chain of bins hanging off the system matrix product state, giving the
//! comb-shaped network in [`comb`]. [`engine`] drives the stroboscopic
//! protocol on that network, and [`dense`] holds exact small-system
//! references (bin-resolved density matrices and a Lindblad integrator).

pub mod comb;
pub mod dense;
pub mod engine;
pub mod error;
pub mod model;
pub mod tensor;

pub use error::{Error, Result};

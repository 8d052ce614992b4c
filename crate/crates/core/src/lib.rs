//! Exact simulation of spin gases: particles that move classically while
//! their qubits pick up commuting Ising phases whenever they meet.
//!
//! The state of the whole gas is fixed by the matrix of accumulated pair
//! phases ([`graph::InteractionGraph`]). Small blocks of it can be read off
//! exactly at any system size ([`state`]), which makes entanglement
//! ([`entanglement`]) and probe decoherence ([`decoherence`]) cheap to track
//! while a kinetic model ([`boltzmann`], [`lattice`]) drives the phases.

pub mod error;
pub mod graph;
pub mod rng;
pub mod state;
pub mod entanglement;
pub mod boltzmann;
pub mod lattice;
pub mod stats;
pub mod decoherence;
pub mod runner;

pub use error::{Error, Result};

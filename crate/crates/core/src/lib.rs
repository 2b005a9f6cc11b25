//! Simulation and verification toolkit for voter-model perturbations,
//! their branching-walk duals, and sharp-interface limits.

pub mod bbm;
pub mod dualtree;
pub mod error;
pub mod gfun;
pub mod harness;
pub mod lattice;
pub mod mcf;
pub mod model;
pub mod pde;
pub mod poly;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};

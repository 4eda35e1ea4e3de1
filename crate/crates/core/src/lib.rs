//! Simulation, spectral fitting and identification of electron–nuclear spin defects probed
//! through a nearby optically readable electron spin.

pub mod analysis;
pub mod error;
pub mod estimation;
pub mod linalg;
pub mod propagator;
pub mod sequences;
pub mod spin_model;
pub mod trace;

pub use error::{Error, Result};

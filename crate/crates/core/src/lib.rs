//! Core library of the transferability benchmark: a self-contained model
//! zoo, direction-based attacks, the distortion-anchored transferability
//! score, decision-agreement fingerprinting, and source selection.

pub mod attack;
pub mod error;
pub mod fingerprint;
pub mod geometry;
pub mod metrics;
pub mod rng;
pub mod select;
pub mod zoo;

pub use error::{Error, Result};

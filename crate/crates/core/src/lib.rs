//! Simulation and estimation toolkit for RIS-aided SISO radio localization.
//!
//! The crate covers the full chain: geometric parameter maps, OFDM channel
//! synthesis under static/dynamic narrowband and spatial-wideband models,
//! temporally orthogonal RIS phase-profile codebooks, the low-complexity
//! delay/Doppler/angle estimation pipeline with successive interference
//! cancellation, and Fisher-information error bounds (PEB and per-parameter
//! CRBs).
//!
//! All randomness flows through explicitly seeded ChaCha8 generators, so
//! every simulation is bit-reproducible from its seed.

pub mod channel;
pub mod error;
pub mod estimator;
pub mod fim;
pub mod geometry;
pub mod ris;

mod optim;
mod spectrum;

pub use error::{Error, Result};

// Re-export the math crates that appear in public signatures so downstream
// crates bind to the same versions.
pub use nalgebra;
pub use num_complex;


//! Coded-exposure (CE) video compression toolkit.
//!
//! * [`ingest`]: frame loading and preprocessing into linear-light clips.
//! * [`patterns`]: tile-repetitive exposure patterns and their file format.
//! * [`encoder`]: masked temporal integration into a single coded image.
//! * [`stats`]: within-tile Pearson statistics and the decorrelation loss.
//! * [`optimizer`]: learning decorrelated patterns with straight-through gradients.
//! * [`energy`]: edge sensing and transmission energy of conventional vs. CE capture.
//! * [`hwsim`]: slot- and cycle-level model of the CE pixel control logic.
//! * [`synthetic`]: seeded synthetic video corpus.

pub mod encoder;
pub mod energy;
pub mod error;
pub mod hwsim;
pub mod ingest;
pub mod optimizer;
pub mod patterns;
pub mod rng;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};

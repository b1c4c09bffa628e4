//! Offline P300 speller analysis.
//!
//! The processing chain runs: [`io`] ingestion, [`signal`] preprocessing,
//! [`epochs`] extraction and averaging, [`spatial`] GEVD filtering,
//! [`riemann`] log-det MDM classification, [`eval`] cross-validated
//! metrics and [`stats`] cluster permutation testing. [`sim`] produces
//! synthetic sessions with known ground truth for all of the above.

pub mod epochs;
pub mod error;
pub mod eval;
pub mod io;
pub mod layout;
pub mod linalg;
pub mod model;
pub mod riemann;
pub mod signal;
pub mod sim;
pub mod spatial;
pub mod stats;
pub mod stim;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

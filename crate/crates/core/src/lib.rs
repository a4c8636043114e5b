//! Exact-diagonalization toolkit for probing ergodicity in small spin systems
//! through a single probe qubit: level statistics, quantum Fisher information
//! dynamics and long-time fluctuation relations.

pub mod error;
pub mod evolve;
pub mod hilbert;
pub mod models;
pub mod probes;
pub mod runner;
pub mod spectra;

pub use error::{Error, Result};

pub type C64 = num_complex::Complex64;

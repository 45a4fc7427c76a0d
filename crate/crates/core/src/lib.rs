//! Lost-in-space star identification by reverse attitude statistics.
//!
//! Modules, bottom up:
//!
//! * [`geometry`]: unit vectors, TRIAD, Euler form and attitude quantization.
//! * [`catalog`]: catalog loading and the bucketed star-pair database.
//! * [`identify`]: the identification pipeline.
//! * [`simulate`]: pinhole-camera star map simulator.
//! * [`baseline`]: triangle-matching reference method.
//! * [`bench`]: seeded benchmark sweeps over both methods.
//! * [`tune`]: Bayesian optimization of the bin width and pair cap.
//! * [`io`]: scene, result and report file formats.

pub mod baseline;
pub mod bench;
pub mod catalog;
pub mod error;
pub mod geometry;
pub mod identify;
pub mod io;
pub mod simulate;
pub mod tune;

pub use error::{Error, Result};

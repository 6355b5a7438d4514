//! Delay-coupled Mach-Zehnder (DCMZ) photonic delay loop as a trainable
//! machine-learning model.
//!
//! The loop is simulated with a fast discrete-time recurrence
//! ([`fast_model`]), validated against a continuous-time integrator
//! ([`dde_oracle`]), and trained end to end with hand-written
//! backpropagation through time ([`bptt`], [`train`]). Input data is encoded
//! through piecewise-constant masks ([`masking`]); [`twin`] emulates
//! hardware mismatch for hybrid retraining, and [`experiment`] runs the
//! optimized / shuffled / random / twin comparison.

pub mod error;
pub mod params;
pub mod masking;
pub mod fast_model;
pub mod dde_oracle;
pub mod bptt;
pub mod train;
pub mod data;
pub mod twin;
pub mod config;
pub mod checks;
pub mod experiment;
pub mod cli;

pub use error::{Error, Result};
pub use params::{validate, RawParams, SystemParams};
pub use masking::{DriveSequence, MaskSet};
pub use fast_model::{forward, RhoCoeffs, StateTrace};

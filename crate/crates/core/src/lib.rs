//! Scale calibration for simulated item-response data.
//!
//! Given a latent trait distribution and an item-generation recipe, find the
//! global discrimination scale `c` so that generated 2PL/Rasch data reach a
//! requested population reliability. Two calibrators are provided:
//! deterministic quadrature with Brent root finding ([`eqc`]) and a
//! Robbins–Monro stochastic approximation ([`sac`]).

mod brent;
pub mod datagen;
pub mod eqc;
pub mod error;
pub mod items;
pub mod latent;
pub mod psychometrics;
pub mod rng;
pub mod sac;
pub mod stats;
pub mod study;

pub use error::{Error, Result};

/// Library version recorded in output documents.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

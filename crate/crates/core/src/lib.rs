//! Core algorithms for auditing the privacy effect of data enhancement.
//!
//! Everything here is pure computation over in-memory buffers: a small
//! feed-forward network with analytic backprop, the data-augmentation and
//! adversarial-training transforms used while fitting it, shadow-fleet
//! bookkeeping, seven membership-inference scoring rules, per-sample
//! memorization estimates and ROC-based attack metrics.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, configuration
//! and the command line front end live in the `memaudit` crate.
//!
//! Numerics are `f64` throughout. Quantities that cross a file boundary
//! (features, logits, parameters) are rounded to `f32` by the caller.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod advtrain;
pub mod attacks;
pub mod augment;
mod error;
pub mod math;
pub mod memorization;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod shadow;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};

//! Scalable compressive imaging codec.
//!
//! An image is acquired through seeded random projections and encoded as two
//! embedded bitstreams: a low-resolution base layer sensed with a dual-scale
//! (Hadamard + random) matrix that admits a fast preview, and a full-resolution
//! enhancement layer carrying prediction residuals over Rademacher
//! measurements. Decoding either layer runs total-variation minimization.

pub mod cli;
pub mod codec;
pub mod image;
pub mod preview;
pub mod quant;
pub mod recon;
pub mod sensing;
pub mod transform;

mod error;

pub use error::{Error, Result};

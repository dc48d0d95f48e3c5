//! Erasure-coded Byzantine reliable broadcast with a deterministic simulator.
//!
//! Two protocols share the `(n, 2t+1)` Reed-Solomon dissemination layer:
//! [`rbc_bit`] needs only collision-resistant hashing, [`rbc_sig`] adds
//! threshold signatures for two-round good-case delivery. [`baseline`] is an
//! `(n, t+1)` echo/ready reference used for overhead comparisons.

pub mod baseline;
pub mod codec;
pub mod error;
pub mod merkle;
pub mod message;
pub mod metrics;
pub mod params;
pub mod protocol;
pub mod rbc_bit;
pub mod rbc_sig;
pub mod simnet;
pub mod thresh;

pub use error::{Error, Result};
pub use params::ProtocolParams;

/// Index of a node in `0..n`.
pub type NodeId = usize;

/// Abstract simulation time.
pub type Time = u64;

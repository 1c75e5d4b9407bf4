//! Speculative decoding with a frequency-trimmed draft vocabulary.
//!
//! The draft model's LM head is cut down to the K tokens that occur most
//! often in a calibration corpus; draft proposals are mapped back to the
//! full vocabulary before the target verifies them greedily. Output is
//! identical to plain greedy decoding of the target, while each draft pass
//! reads fewer parameters.

pub mod calibration;
pub mod config;
pub mod decode;
pub mod error;
pub mod lm;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod vocab;

pub use error::{Error, Result};

/// Index into the full (target) vocabulary.
pub type TokenId = u32;

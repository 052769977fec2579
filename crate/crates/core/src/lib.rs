//! Link-level simulator for OFDM-based digital semantic communication.
//!
//! The pipeline extracts semantic feature maps with a small codec, scores
//! their importance, allocates subcarriers and quantization bits, pushes the
//! quantized bitstreams through a 64QAM/OFDM physical layer over multipath
//! fading, and feeds the recovered features to the task head.
//!
//! Modules, bottom up:
//!
//! - [`quant`]: non-subtractive dithered uniform scalar quantization.
//! - [`phy`]: channel codes, 64QAM, OFDM, multipath channels, estimation.
//! - [`semcodec`]: deterministic feature encoder and trainable task head.
//! - [`importance`]: task relevance, inter-feature relevance, combined weights.
//! - [`alloc`]: subcarrier matching, baseline bit allocators, distortion.
//! - [`dppo`]: PPO bit allocator with a dynamic (masked) action space.
//! - [`harness`]: end-to-end episodes, sweeps, comparisons, persistence.

pub mod alloc;
pub mod dppo;
mod error;
pub mod harness;
pub mod importance;
pub mod nn;
pub mod phy;
pub mod quant;
pub mod rng;
pub mod semcodec;

pub use error::{Error, Result};

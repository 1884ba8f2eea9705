//! Chroma-conditioned autoencoders for timbre synthesis.
//!
//! The crate covers the whole workflow: STFT-magnitude corpora built from
//! WAV clips, dense autoencoders trained on those frames (optionally with a
//! one-hot chroma vector appended to the input and routed around the
//! encoder to the bottleneck), latent-space characterization by mesh
//! sampling, and a real-time resynthesis engine that decodes a live latent
//! position every hop and inverts it with a stored noise phase.

pub mod chroma;
pub mod cli;
pub mod corpus;
pub mod dsp;
mod error;
pub mod explore;
pub mod model;
pub mod nn;
pub mod synth;
pub mod synthetic;
pub mod train;
pub mod wav;

pub use error::{Error, Result};

/// Canonical sample rate of every corpus and rendered stream.
pub const SAMPLE_RATE: u32 = 44_100;
/// Analysis and synthesis FFT length.
pub const FFT_SIZE: usize = 4096;
/// Hop between successive frames (75% overlap).
pub const HOP_SIZE: usize = 1024;
/// Non-redundant bins of a real FFT of `FFT_SIZE` points.
pub const NUM_BINS: usize = FFT_SIZE / 2 + 1;
/// Number of equal-temperament pitch classes.
pub const NUM_CLASSES: usize = 12;

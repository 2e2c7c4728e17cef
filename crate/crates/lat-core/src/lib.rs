//! Polar-coding workbench built around a latent-attention transformer (LAT) decoder.
//!
//! The crate has five parts:
//!
//! - [`polar`] — classical polar coding: GA / Bhattacharyya construction, encoding,
//!   BPSK + AWGN channel simulation, and the SC / SCL / ML reference decoders.
//! - [`tensor`] — a minimal dense 2-D tensor engine with reverse-mode differentiation,
//!   an Adam optimizer, and a binary checkpoint format. Exactly the operations the
//!   LAT network needs, no more.
//! - [`model`] — the LAT network: front-padding, input/Value/Query embeddings,
//!   latent-attention decoding layers with code-aware masking, and the output head.
//! - [`trainer`] — the training framework: entropy-aware importance sampling,
//!   experience reflow, dynamic label smoothing, hybrid KLD + block-error loss.
//! - [`eval`] — Monte-Carlo BER/BLER measurement with paired noise, dB-gap
//!   computation between decoder curves, and CSV export.

pub mod error;
pub mod eval;
pub mod model;
pub mod polar;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

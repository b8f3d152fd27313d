//! Adversarial-robustness testbed for automatic speaker verification.
//!
//! This crate is the allocation-only (`no_std` + `alloc`) algorithmic core:
//!
//! - [`autodiff`]: a small reverse-mode tape over dense `f64` tensors.
//! - [`features`]: differentiable log-mel filterbank front-end.
//! - [`model`]: frame MLP + attentive pooling speaker embedder, cosine
//!   scoring, AM-softmax loss.
//! - [`train`]: Adam training loop on a speaker corpus.
//! - [`metrics`]: trial sets, EER threshold calibration, FAR/FRR.
//! - [`attack`]: BIM (iterative sign-gradient) attacks, including
//!   defense-aware variants.
//! - [`defense`]: Gaussian-ball voting and the filter baselines.
//! - [`corpus`]: deterministic synthetic speaker corpus.
//!
//! File formats, the experiment runner and the CLI live in the `asv-vote`
//! companion crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod attack;
pub mod autodiff;
pub mod corpus;
pub mod defense;
mod error;
pub mod features;
mod fft;
pub mod math;
pub mod metrics;
pub mod model;
pub mod seed;
pub mod train;
mod waveform;

pub use error::{Error, Result};
pub use waveform::{Waveform, AMPLITUDE_UNIT};

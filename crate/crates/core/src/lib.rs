//! Blind recognition of Alamouti (AL) versus spatial-multiplexing (SM)
//! space-time block codes.
//!
//! The crate covers the whole pipeline: synthesizing coded transmissions
//! through a Nakagami-m fading channel, cutting them into labeled 2x128 IQ
//! frames, training a small convolutional network written from scratch, and
//! evaluating it per SNR. A second-order correlation detector is included as
//! a hand-crafted baseline.
//!
//! See the `examples/` directory for one runnable program per capability.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline_corr;
pub mod classifier;
pub mod dataset;
mod error;
mod pool;
pub mod evaluation;
pub mod rng;
pub mod signal_model;
pub mod tensor_nn;

pub use error::{Error, Result};
pub use signal_model::CodingScheme;

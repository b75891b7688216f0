//! Incremental-evolution pose generation.
//!
//! The crate is `no_std` (with `alloc`) and holds every numeric piece of the
//! pipeline: a small reverse-mode autodiff engine, the procedural
//! turning-figure domain, the global evolution network, the incremental
//! evolution blocks, the triple-path fusion synthesizer, the training
//! objectives and the image metrics. File formats and the command line live
//! in the companion `iepg` crate.

#![no_std]
// `!(x > 0.0)` is the house idiom for "positive and not NaN".
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod error;
pub mod fusion;
pub mod gec;
pub mod gradcheck;
pub mod iec;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod params;
pub mod pose;
pub mod tensor;
pub mod train;

pub use crate::autodiff::{Gradients, Tape, Var};
pub use crate::error::{Error, Result};
pub use crate::params::{Binding, ParamId, ParamStore};
pub use crate::tensor::Tensor;

/// Deterministic generator used for every seeded draw in the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate generator from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

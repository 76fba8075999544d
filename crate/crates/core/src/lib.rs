//! Numerical core of a reinforcement-learning text style transfer system.
//!
//! A GRU encoder-decoder with attention rewrites source-style sentences into
//! the target style. It is trained by REINFORCE against three evaluators: an
//! adversarially refined bidirectional-GRU style discriminator, a word
//! mover's distance content scorer, and a two-layer GRU language model.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, checkpoints
//! and the command line live in the `rlst` crate.
#![no_std]
// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod corpus;
pub mod discriminator;
pub mod embedding;
pub mod error;
pub mod generator;
pub mod gradcheck;
pub mod graph;
pub mod lm;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod rl;
pub mod semantic;
pub mod sentence;
pub mod tensor;

pub use error::{Error, Result};
pub use sentence::{Sentence, Style};
pub use tensor::{Gradients, ParamId, ParameterSet, Tensor};

/// Seeded PRNG used everywhere randomness is needed.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

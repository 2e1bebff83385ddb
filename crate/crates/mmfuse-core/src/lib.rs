//! Core engine for gated multi-modal fusion: dense layers with analytic
//! gradients, an AMSGrad optimizer, clip/sequence/trailer encoders with
//! collaborative expert gating, supervised and contrastive losses,
//! multi-label metrics, and cosine retrieval.
//!
//! Everything in this crate is pure computation over `alloc` containers:
//! no IO, no clocks, no threads. File formats, checkpointing and the CLI
//! live in the companion `mmfuse` crate.
//!
//! Determinism contract: given the same inputs and seed, every function in
//! this crate produces bitwise-identical results. All reductions run
//! left-to-right over a fixed index order and nothing here spawns threads.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod aggregate;
pub mod corpus;
pub mod error;
pub mod gating;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod retrieval;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{CoreError, Result};
pub use rng::SeededRng;
pub use tensor::Tensor2;

//! Response selection for multi-turn dialog with LSTM encoders.
//!
//! A context and a candidate response are each embedded, run through an LSTM
//! encoder and pooled to a vector; a similarity head turns the pair of vectors
//! into a logit and a pairing probability trained with binary cross-entropy.
//! Two architectures are provided: a bi-encoder with separate context and
//! response encoders, and a dual encoder that shares one encoder and compares
//! through a trainable bilinear matrix.
//!
//! All math is `f64`, gradients are exact reverse-mode (BPTT), and every
//! random draw comes from a seeded [`numkit::Rng`], so runs are reproducible
//! bit for bit. Batch gradients and evaluation fan out over examples with
//! rayon when the `parallel` feature is on.

pub mod checkpoint;
pub mod corpus;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod model;
pub mod numkit;
pub mod optim;
pub mod par;
pub mod scoring;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

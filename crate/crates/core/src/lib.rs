//! Sparsified neuron probing and cross-layer integration over serialized
//! transformer representations.
//!
//! The pipeline: pool each layer's token representations ([`pooling`]), fit an
//! L1 logistic probe per layer ([`probe`]), keep the smallest set of neurons
//! covering a fraction `eta` of each probe's weight mass ([`sparsify`]), then
//! concatenate the kept neurons across layers and train a classification head
//! ([`integrate`]). [`evalstats`] runs grid searches and cross-validation and
//! [`cost`] estimates parameter and FLOP budgets.

mod codec;
pub mod cost;
pub mod error;
pub mod evalstats;
pub mod integrate;
pub mod pooling;
pub mod probe;
pub mod repstore;
pub mod sparsify;

pub use error::{Error, Result};

//! # natlas
//!
//! Locates language- and culture-specific neurons in GLU transformers.
//!
//! The pipeline counts how often each feed-forward gate neuron fires on
//! labeled text, scores every neuron by the entropy of its normalized
//! firing probabilities across labels, keeps the lowest-entropy tail, and
//! separates culture neurons from language neurons with set algebra.
//! Ablating a set (forcing its gate activations to zero) and measuring the
//! perplexity change on held-out text per label tests what the set does.
//!
//! A synthetic generator builds models with planted neurons whose
//! specificity and effect are known exactly, so every stage can be checked
//! end to end.

pub mod container;
pub mod corpus;
pub mod entropy;
pub mod error;
pub mod intervention;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod scalar;
pub mod select;
pub mod sets;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};
pub use model::{
    ActFn, CaptureSink, GateSigns, LayerWeights, ModelSpec, NeuronId, NeuronMask, PositionalEncoding,
    WeightBundle,
};
pub use scalar::Scalar;

/// The engine at its default precision.
pub type Model = model::Model<f32>;
/// Weights at the default engine precision.
pub type Weights = model::WeightBundle<f32>;

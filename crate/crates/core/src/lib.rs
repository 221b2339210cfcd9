//! Feature-level adversarial training for small text classifiers.
//!
//! A CNN classifier is trained with variational word masks whose selection
//! probabilities come from an inference network over word embeddings. The
//! probabilities double as global word importance scores, and a regularizer
//! ties the importance of words replaced by an attack to that of their
//! substitutes. The crate also carries the greedy substitution attacks,
//! Integrated Gradients, and the robustness and consistency metrics used to
//! evaluate the result.

pub mod attack;
pub mod autodiff;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod interpret;
pub mod masks;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod training;

pub use error::{Error, Result};

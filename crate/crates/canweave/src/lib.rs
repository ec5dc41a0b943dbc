//! Cross-domain text classification with category-memory attention.
//!
//! The library trains a binary sentiment classifier on a labeled source
//! domain together with unlabeled text from a target domain. Each domain
//! carries a small bank of category memories (salient positive/negative
//! words for the source, free vectors for the target). A matching step
//! picks the memories most related to a sentence, an attention layer turns
//! them into category-weighted sentence vectors, and a convolutional
//! encoder supplies n-gram features. Training combines the supervised
//! objective with an attention-separation term and a feature-alignment
//! term so the target domain shapes the representation without labels.
//!
//! Everything is seeded and deterministic: identical inputs and seeds
//! reproduce identical checkpoints byte for byte.

pub mod can;
pub mod cli;
pub mod cmm;
pub mod cnn;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod losses;
pub mod model;
pub mod report;
pub mod seeds;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

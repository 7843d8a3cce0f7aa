//! Asymmetric visual semantic embedding engine.
//!
//! Images are encoded as several views, each built from a group of patches
//! drawn by radial bias sampling; captions are encoded as a single vector.
//! Similarity is computed by blocked max-sum matching between meta-blocks of
//! the two embeddings, and training combines a hardest-negative triplet loss
//! with a cross-view correlation regularizer.

pub mod aeom;
pub mod bench;
pub mod cli;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod objectives;
pub mod pipeline;
pub mod sampler;
pub mod store;
pub mod synth;
pub mod trainer;

pub use error::{AvseError, FormatError, Result};

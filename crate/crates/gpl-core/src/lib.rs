//! Unsupervised key-step discovery from multiple videos of one task.
//!
//! The pipeline consumes precomputed clip-level feature files, builds a
//! single graph over all videos (temporal chains within a video, argmax
//! cosine links across videos), refines node embeddings with biased random
//! walks and skip-gram training, clusters the result with KMeans, orders
//! clusters by average normalized time and scores them against frame-level
//! ground truth.
//!
//! Everything is deterministic for fixed seeds; stages communicate through
//! files so each step can be inspected or rerun in isolation.

pub mod background;
pub mod cluster;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod ordering;
pub mod pipeline;
pub mod projection;
pub mod synth;
pub mod types;

pub use error::{Error, Result};

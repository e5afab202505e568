//! Selective structural augmentation for graphs with a long tail of
//! low-degree nodes.

pub mod augment;
pub mod config;
pub mod engine;
pub mod eval;
pub mod graph;
pub mod negatives;
pub mod pagerank;
pub mod pipeline;
pub mod pseudo;
pub mod rng;

pub use graph::{Graph, GraphDelta, GraphError};

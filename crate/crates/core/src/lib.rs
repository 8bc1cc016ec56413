//! Legal judgment prediction toolkit: case corpora, hierarchical attention
//! encoders, task heads, training protocol, feature baselines, evaluation
//! and attention inspection.

pub mod anonymizer;
pub mod baselines;
pub mod corpus;
pub mod encoders;
mod error;
pub mod evaluation;
pub mod experiment;
pub mod models;
pub mod par;
pub mod synth;
pub mod trace;
pub mod training;

pub use error::{Error, Result};

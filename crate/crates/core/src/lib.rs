//! Location prediction for social media users: text and network feature
//! extraction, the hierarchical country/city model, training and evaluation.

pub mod error;
pub mod geo;
pub mod graph;
pub mod model;
pub mod text;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

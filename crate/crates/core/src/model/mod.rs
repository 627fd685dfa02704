//! The hierarchical location prediction network.

mod config;
mod hlpnn;
pub mod layers;

pub use config::{Features, ModelConfig, ModelDims};
pub use hlpnn::{argmax, cross_entropy, hierarchy_penalty, Forward, Hlpnn, Loss, Sample, TABLE_INIT_RANGE};

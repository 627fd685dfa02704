//! Mention networks and their LINE embeddings.

mod line;
mod mention;

pub use line::{train_line, AliasSampler, LineConfig, NetworkEmbeddings, MIN_LR_FRACTION, NOISE_POWER};
pub use mention::{build_graph, remove_celebrities, EdgeList, GraphMode, MentionGraph, CELEBRITY_THRESHOLD};

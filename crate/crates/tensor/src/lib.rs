//! Minimal dense tensor library with tape-based reverse-mode automatic
//! differentiation, the Adam optimizer, gradient clipping, finite-difference
//! gradient checks and a binary checkpoint format.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
mod kernels;
mod ops;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader};
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_params, roundoff_bound, GradCheckReport, DEFAULT_EPS, ROUNDOFF_ULPS};
pub use optim::{adam_step, clip_gradients, AdamConfig, AdamState};
pub use params::{ParamId, ParamStore};
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

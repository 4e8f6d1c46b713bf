//! Minimal reverse-mode automatic differentiation over dense `f64` tensors:
//! enough to train the raw-waveform front-ends, the depthwise-separable
//! encoder and the TDNN embedder, and to differentiate through the Hilbert
//! transform, L2 pooling, sinc parameterization and the variational-dropout
//! reparameterization.
//!
//! A graph and its tensors belong to one logical execution stream; distinct
//! graphs may run in parallel. Backward traversal is single-threaded and
//! deterministic.

mod adam;
mod gradcheck;
mod tensor;

pub use adam::{adam_step, Adam, AdamMoments};
pub use gradcheck::{finite_diff_check, op_gradient_suite, rel_err, GradCheck};
pub use tensor::{backward, Tensor, TensorError};

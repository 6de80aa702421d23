//! Minimal CPU tensor engine for the ARCADE models.
//!
//! Provides a dense `f64` [`Tensor`], a tape-based autodiff [`Graph`] whose
//! gradients can be differentiated again, the 1-D convolution family, and an
//! [`Adam`] optimizer. Everything runs single-threaded and is bit-for-bit
//! deterministic.

mod graph;
mod kernels;
mod optim;
mod tensor;

pub use graph::{Graph, Var};
pub use kernels::{conv1d_out_len, conv_transpose1d_base_len};
pub use optim::Adam;
pub use tensor::Tensor;

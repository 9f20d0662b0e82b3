//! Minimal dense-tensor math for CPU training of small convolutional GANs:
//! tensors, reverse-mode autodiff, convolution/normalization kernels, Adam and
//! a splittable seeded RNG.

pub mod adam;
pub mod element;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod param;
pub mod rng;
pub mod tensor;

pub use adam::{adam_step, adam_update, Adam, AdamState};
pub use element::Element;
pub use error::{Result, TensorError};
pub use graph::{softmax_rows, Gradients, Graph, Var};
pub use kernels::PadMode;
pub use param::{ParamEntry, ParamId, ParamStore};
pub use rng::{Rng, RngState};
pub use tensor::Tensor;

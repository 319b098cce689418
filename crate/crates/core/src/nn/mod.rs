//! A small reverse-mode autograd engine specialised for single-sample 3D
//! convolutional networks.
//!
//! Activations are channel-first `(C, D, W, H)` tensors. Convolutions are
//! lowered to im2col + GEMM. Everything is generic over [`Real`] so the same
//! network code runs in `f32` for training and `f64` for gradient checks.

mod conv;
mod graph;
mod optim;
mod params;
mod scalar;
mod tensor;

pub use conv::ConvGeom;
pub use graph::{Activation, Graph, NodeId};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Gradients, ParamId, ParamStore, StoredParam};
pub use scalar::Real;
pub use tensor::Tensor;

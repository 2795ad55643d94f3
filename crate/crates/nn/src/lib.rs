//! Minimal reverse-mode automatic differentiation over dense NCHW tensors.
//!
//! The engine is deliberately small: a [`Tensor`] type, a recording
//! [`Graph`], the handful of layers a convolutional encoder-decoder with a
//! recurrent branch needs, and [`Adam`]. Everything is generic over
//! [`Real`] so the same model can be trained in `f32` and gradient-checked
//! in `f64`.

mod graph;
pub mod init;
pub mod kernels;
pub mod layers;
mod optim;
mod real;
mod store;
mod tensor;

pub use graph::{Grads, Graph, Var};
pub use layers::Mode;
pub use optim::Adam;
pub use real::Real;
pub use store::{Entry, EntryKind, ParamId, ParamStore, RunningStatUpdate};
pub use tensor::Tensor;

//! Minimal CPU tensor library with reverse-mode autodiff, sized for training
//! small convolutional segmentation and classification networks in `f64`.

mod error;
mod graph;
mod kernels;
mod params;
mod tensor;

pub use error::{NnError, Result};
pub use graph::{sigmoid, Grads, Graph, Var};
pub use kernels::Conv2dGeom;
pub use params::{Initializer, ParamId, ParamStore};
pub use tensor::Tensor;

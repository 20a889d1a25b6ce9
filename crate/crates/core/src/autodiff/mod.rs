//! Minimal reverse-mode automatic differentiation over NCHW tensors.
//!
//! Operations are recorded on a [`Graph`] tape. Backward rules are themselves
//! tape operations, so a gradient computed with `create_graph` can be
//! differentiated again (needed by the gradient penalty).

mod adam;
pub mod checkpoint;
mod graph;
pub mod kernels;
mod ops;
mod params;
mod scalar;

pub use adam::{Adam, AdamConfig};
pub use graph::{Gradients, Graph, Tensor};
pub use kernels::{conv_out_len, ConvGeom, ConvSpec};
pub use params::{Bound, NamedTensor, Param, ParamId, ParamStore};
pub use scalar::Scalar;

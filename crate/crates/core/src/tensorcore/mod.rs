//! Minimal differentiable tensor engine: NCHW `f64` tensors, a
//! reverse-mode tape with the convolution/attention primitives the network
//! needs, the Adam optimizer and a binary checkpoint format.

mod adam;
mod checkpoint;
mod graph;
pub(crate) mod kernels;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState, LrPhase, LrSchedule};
pub use checkpoint::Checkpoint;
pub use graph::{Graph, Var};
pub use kernels::ConvGeometry;
pub use params::{Binder, ParamStore};
pub use tensor::Tensor;

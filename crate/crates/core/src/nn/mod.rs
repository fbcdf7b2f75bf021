//! A small dense-tensor engine with hand-written reverse-mode gradients for
//! exactly the layers the geometry network uses.

mod adam;
mod gemm;
mod layers;
mod loss;
mod sequential;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use layers::{BatchNorm1d, Conv1d, Layer, Linear, Param, Relu, Reshape};
pub use loss::{mse_loss, MseLoss};
pub use sequential::{Mode, Sequential, Snapshot, WEIGHTS_MAGIC, WEIGHTS_VERSION};
pub use tensor::Tensor;

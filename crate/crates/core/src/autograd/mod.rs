//! Dense tensors with reverse-mode automatic differentiation.

mod checkpoint;
mod error;
mod graph;
pub mod init;
pub mod kernels;
mod params;
mod scalar;
mod tensor;

pub use checkpoint::{checkpoint_precision, load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use error::{Result, TensorError};
pub use graph::{concat, Graph, NodeId};
pub use kernels::LrnParams;
pub use params::{sgd_step, Param, ParamGrads, Params, Sgd};
pub use scalar::Scalar;
pub use tensor::{argmax, Tensor};

//! Small differentiable-numerics kernel: dense matrices, a reverse-mode tape,
//! Adam, finite-difference verification and parameter checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod tensor;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use gradcheck::{forward_backward, grad_check, grad_check_fn};
pub use graph::{top_k_indices, Graph, Padding, Var};
pub use optim::{adam_step, OptimState};
pub use params::{Gradients, ParamId, ParamSet, ParamTensor};
pub use tensor::{interpolate, interpolate_rows, sigmoid, softmax, Matrix, Real};

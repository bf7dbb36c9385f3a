//! Small reverse-mode differentiation for the MLP compositions used here:
//! ELU networks, a batched graph with stop-gradient, Adam, EMA shadows,
//! a finite-difference checker, and the binary array file format.

mod arrayfile;
mod gradcheck;
mod graph;
mod mlp;
mod optim;
mod params;
mod scalar;

pub use arrayfile::{ArrayData, ArrayFile, NamedArray, FORMAT_VERSION, MAGIC};
pub use gradcheck::{finite_diff_check, finite_diff_check_coords, relative_error, GradCheck};
pub use graph::{Gradients, Graph, NodeId, ParamRef};
pub use mlp::{elu, Linear, MlpParams, MlpTape};
pub use optim::{Adam, EmaShadow};
pub use params::{add_scaled_params, clip_global_norm, global_norm, prefixed, ParamVector, Parameters, TensorView};
pub use scalar::Scalar;

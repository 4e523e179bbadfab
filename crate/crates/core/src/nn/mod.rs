//! Small reverse-mode differentiable numeric core: tensors, a recorded tape,
//! dense / LSTM / attention layers, a Gaussian likelihood head, Adam and a
//! finite-difference gradient checker.

mod adam;
mod gradcheck;
mod graph;
mod layers;
mod params;
mod tensor;

pub use adam::AdamState;
pub use gradcheck::grad_check;
pub use graph::{gaussian_nll_value, sigmoid, softplus, Activation, Graph, Var};
pub use layers::{
    attention_eval, attention_forward, dense_forward, Dense, GaussianHead, GaussianParams,
    LayerNorm, LstmCell, SIGMA_FLOOR,
};
pub use params::{ParamId, ParameterSet, FORMAT_VERSION, MAGIC};
pub use tensor::Tensor;

/// Default optimizer and stabilization settings shared by every model.
pub const LEARNING_RATE: f64 = 1e-3;
pub const CLIP_NORM: f64 = 10.0;

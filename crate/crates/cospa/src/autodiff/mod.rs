//! Minimal reverse-mode differentiation core: enough for ReLU MLPs, GRUs,
//! layer normalization, MSE and categorical cross-entropy, optimized by Adam.

pub mod adam;
pub mod kernels;
pub mod nn;
pub mod real;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamCfg, AdamState};
pub use nn::{BoundParams, Gru, Mlp, MlpSpec, ParamSet, LAYER_NORM_EPS};
pub use real::Real;
pub use tape::{Act, Tape, Var};
pub use tensor::Tensor;

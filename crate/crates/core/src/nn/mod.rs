//! A small reverse-mode autograd engine with the layers, optimizer and
//! schedule needed by the separator.

pub mod gradcheck;
mod graph;
mod layers;
mod optim;
mod params;
mod scalar;
mod tensor;

pub use graph::{Graph, Var, SI_SDR_CAP_DB};
pub use layers::{multihead_self_attention, sinusoidal_positional_encoding, AttentionParams};
pub use optim::{adamw_amsgrad_step, clip_grad_l2, global_norm, AdamWConfig, OptimizerState, PlateauScheduler};
pub use params::{uniform_init, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;

//! Reverse-mode automatic differentiation over dense f64 tensors, plus the
//! optimizer, network layers, gradient checking, and checkpointing built on
//! top of it. Tapes are single-threaded and consumed by one backward pass.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod nn;
pub mod tape;
pub mod tensor;

pub use adam::{clip_global_norm, global_grad_norm, Adam, AdamConfig};
pub use nn::{Activation, Binding, GruCell, Linear, Mlp, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

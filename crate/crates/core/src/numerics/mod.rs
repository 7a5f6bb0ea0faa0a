//! Dense f64 tensors, a tape-based reverse-mode autodiff engine, the layer
//! primitives the model needs, Adam and a one-cycle schedule.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_params};
pub use graph::{Graph, Op, Param, ParamId, ParamStore, Var};
pub use optim::{AdamState, OneCycleSchedule};
pub use rng::Rng;
pub use tensor::Tensor;

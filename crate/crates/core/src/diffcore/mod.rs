//! Dense tensors, a dynamic reverse-mode graph, and the few layers and
//! optimizers the summarization policy is built from.

pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tensor;

pub use gradcheck::{grad_check, GradReport, ParamCheck};
pub use graph::{masked_softmax_raw, Graph, Var};
pub use nn::{init_lstm, lstm_step, LstmWeights};
pub use optim::{adam_step, AdamConfig};
pub use params::{Param, ParamStore};
pub use tensor::Tensor;

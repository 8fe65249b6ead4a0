//! Define-by-run reverse-mode automatic differentiation with a gated,
//! block-constrained backward pass, plus chain and tree-structured LSTMs
//! trained on a sine-wave prediction task.

pub mod cli;
pub mod error;
pub mod functions;
pub mod graph;
pub mod lstm;
pub mod model;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{BlockId, Graph, TraversalTrace, VarId};
pub use model::{BlockChain, TrainConfig};
pub use tensor::Tensor;

//! The compact 3D CNN: architecture, parameters, batched inference and the
//! training loop with its transfer modes.

mod arch;
mod engine;
mod model;
mod params;
mod train;

pub use arch::{Architecture, ShapeChain};
pub use engine::Engine;
pub use model::{count_parameters, NetworkModel, ParameterCount};
pub use params::{Params, Trace, TENSOR_NAMES};
pub use train::{
    train, train_examples, train_with_history, Example, TrainConfig, TrainMode, TrainOutcome,
};

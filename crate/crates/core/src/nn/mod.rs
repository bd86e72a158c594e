//! Model, loss, optimiser and checkpointing.

mod adam;
pub mod checkpoint;
mod loss;
mod model;
mod params;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{loss, mse_loss, nll_loss, LossKind};
pub(crate) use model::ChunkPlan;
pub use model::{
    Activation, BatchStats, Forward, ForwardOptions, Mode, ModelConfig, SequenceRegressor, TemporalInput,
    CONCRETE_LOGIT,
};
pub use params::{NamedTensor, ParamSet};

#[cfg(test)]
mod tests;

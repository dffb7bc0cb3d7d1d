//! Optimization of surrogates under the mean-squared-error objective.

mod adam;
mod loss;
mod sampler;
mod trainer;
mod utilization;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{mse, mse_loss, squared_error};
pub use sampler::{sample_batch, MemberBatch};
pub use trainer::{
    batch_gradients, batch_loss, batch_loss_graph, validation_psnr, LogRecord, TrainConfig, TrainReport, Trainer,
    TrainingData, LOG_HEADER,
};
pub use utilization::{entropy, key_utilization, UtilizationReport};

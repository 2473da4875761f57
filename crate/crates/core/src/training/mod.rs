//! Hybrid loss, Adam optimization with periodic validation resplits, and
//! checkpoint persistence.

mod adam;
mod checkpoint;
mod loss;
mod resplit;
mod trainer;

pub use adam::{Adam, AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use loss::{hybrid_loss, hybrid_loss_batch, BatchLoss, LossBreakdown, LossWeights, PROB_FLOOR};
pub use resplit::{resplit, PoolSplit};
pub use trainer::{subset_accuracy, train, EpochMetrics, TrainConfig, TrainingSet};

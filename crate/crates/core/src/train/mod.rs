//! Masked multi-task training, balanced sampling and evaluation.

mod epoch;
mod loss;
mod metrics;
mod sampler;

pub use epoch::{
    dataset_loss, evaluate, fit, prepare_samples, sample_gradients, train_epoch, EpochStats, EpochSummary, SampleGrad,
    TrainConfig, TrainSample,
};
pub use loss::{multitask_loss, LossTerms, LossWeights};
pub use metrics::{fmax, fmax_thresholds, rmse_mae, MetricRecord, MetricReport, TaskMetrics, SELECTION_RULE};
pub use sampler::balanced_batches;

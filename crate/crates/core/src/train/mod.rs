//! Losses, the Adam optimizer, the training loop with early stopping and the
//! evaluation protocol.

mod adam;
mod metrics;
mod trainer;

pub use adam::Adam;
pub use metrics::{compute_metrics, HorizonMetrics, MetricAccumulator, MetricReport, MAPE_THRESHOLD};
pub use trainer::{
    destandardize_var, evaluate, historical_index, loss, model_input, predict_window, train_loop, write_history,
    EpochRecord, LossKind, StopReason, TrainConfig, TrainOutcome,
};

//! Losses, negative mining, the start/end filter and the trainer.

mod filter;
mod logits;
mod loss;
mod negatives;
mod trainer;

pub use filter::{train_filter, ClassifierMetrics, FilterConfig, FilterData, FilterModel, FilterReport};
pub use logits::{compute_logits, LogitBundle};
pub use loss::{
    apply_no_answer, aux_loss_end, aux_loss_start, combined_loss, true_loss, LogitGrad, LossBreakdown, LossWeights,
    SpanLogits, Target,
};
pub use negatives::{mine_negatives, NegativeKind, NegativePick, PoolQuestion};
pub use trainer::{loss_and_layer_grad, prepare_examples, EpochMetrics, TrainOutcome, Trainer, TrainingConfig, TrainingExample};

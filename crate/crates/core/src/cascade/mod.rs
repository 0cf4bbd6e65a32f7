//! Multi-resolution cascade: per-level scorers, dynamic shortlisting with
//! teacher forcing, rescaled BCE training and beam inference.

mod loss;
mod model;
mod ops;
mod optim;
mod train;

pub use loss::{bce_with_logits, level_loss};
pub use model::{
    nominal_shortlist_sizes, CascadeModel, Gradients, InstancePass, ModelConfig, Prediction,
};
pub use ops::{
    evict_negatives, next_train_shortlist, rescale_alphas, score_shortlist, topk_select,
    LevelClassifier,
};
pub use optim::{AdamW, LrSchedule, ParamGroup, WarmupShape, ANNEAL_FLOOR};
pub use train::{
    batch_gradients, train, training_step, EpochLog, ScheduleConfig, StepReport, TrainConfig,
    TrainLog,
};
pub(crate) use train::build_pool;

//! Adam, the training loop and the whole-model gradient check.

pub mod adam;
pub mod gradcheck;
pub mod trainer;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{check_model_gradients, format_checks, jitter_biases, GradcheckConfig, LayerCheck};
pub use trainer::{
    batch_gradient, epoch_order, load_train_state, sample_gradient, save_train_state, train, EpochLog, TrainConfig,
    TrainSample, TrainState,
};

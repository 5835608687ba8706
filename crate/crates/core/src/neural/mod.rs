//! Hadamard-product comparator: a small CNN scoring `K ⊙ R` planes, trained
//! with binary cross-entropy over positive/negative pairs.

mod adam;
mod model;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use model::{
    bce, bce_pair_loss, sigmoid, ComparatorModel, Gradients, InputNorm, ModelConfig,
    PreparedInput, LOCAL_NORM_WINDOW, MIN_INPUT_SIDE, PROB_EPS,
};
pub use train::{
    batch_inputs, epoch_means, hadamard_crop, sample_batch, train, train_from, write_loss_csv,
    LossEntry, TrainConfig, TrainOutcome, TrainSample, TrainingDevice, TrainingSet,
};

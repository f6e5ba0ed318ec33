//! Contrastive alignment of the IMU encoder to the frozen vision space.

mod checkpoint;
pub mod gradcheck;
pub mod loss;
mod model;
pub mod optim;
mod train;

pub use checkpoint::{Checkpoint, ModelConfig, TrainState, VisionConfig};
pub use loss::{
    cosine_similarity_matrix, info_nce_loss, info_nce_with_grad, l2_normalize_rows,
    supervised_loss, total_loss, ClassHead, LossConfig, LossTerms,
};
pub use model::{AlignmentModel, EmbeddingStage, Pipeline};
pub use train::{
    evaluate_loss, imu_matrix, train, train_with_validator, vision_matrix, EarlyStopping,
    EpochRecord, HeldOutValidator, ScriptedValidator, TrainConfig, TrainOutcome, Validator,
};

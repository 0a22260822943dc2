//! Feed-forward network regressing input features onto warm embedding vectors.

mod io;
mod network;
mod train;

pub use network::{
    BatchNorm, BnPlacement, Dense, Gradients, Mode, RegressorModel, RegressorSpec, BN_EPS,
};
pub use train::{
    evaluate_mse, predict_embeddings, train, EpochStats, Samples, TrainConfig, TrainOutcome,
};
pub use io::write_loss_csv;

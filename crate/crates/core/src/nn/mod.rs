//! Small deterministic feed-forward training engine.

mod adam;
pub mod autoencoder;
pub mod checkpoint;
pub mod gradcheck;
mod mlp;
mod objective;
mod real;
mod train;

pub use adam::AdamState;
pub use mlp::{mse, mse_with_grad, Activation, DenseLayer, ForwardTrace, MlpModel};
pub(crate) use mlp::{glorot_uniform, into_flat};
pub use objective::Objective;
pub use real::Real;
pub use train::{fit, train_regression, EpochRecord, Split, TrainConfig, TrainOutcome};

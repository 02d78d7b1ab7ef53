//! Loss, gradients and the training algorithms: one-pass ridge regression,
//! inverted backpropagation, linear rotation-compression and SS backpropagation.

pub mod backward;
pub mod loss;
pub mod ridge;
pub mod sgd;
pub mod train;

pub use backward::GradientSet;
pub use loss::LossKind;
pub use ridge::RidgeAccumulator;
pub use sgd::{sgd_step, MomentumState, SgdParams};
pub use train::{evaluate, train, Algorithm, EpochMetrics, LabeledSet, TrainConfig, TrainOutcome};

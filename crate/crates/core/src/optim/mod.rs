//! Initialization, momentum SGD and gradient/weight normalization rules.

pub mod class_weights;
pub mod config;
pub mod gems;
pub mod init;
pub mod sgd;

pub use class_weights::normalize_class_weights;
pub use config::{effective_lr, ExperimentConfig, TrainConfig};
pub use gems::{active_counts, gems_normalize, gems_rescale_filters};
pub use init::he_fan_in_init;
pub use sgd::SgdState;

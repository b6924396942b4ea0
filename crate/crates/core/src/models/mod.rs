//! Surrogate networks, classifiers, fusion heads and training workflows.

mod arch;
mod train;

pub use arch::{
    build_cnn1d, build_dense_classifier, build_image_surrogate, build_mlp, build_signal_surrogate, DenseNetConfig,
    FusionHead, ImageSurrogateConfig, SignalSurrogateConfig, FUSION_DIM,
};
pub use train::{
    dataset_loss, evaluate, fine_tune, predict_classes, train, transfer_base_weights, EpochRecord, FineTuneOutcome,
    Metric, Schedule, Selection, Supervised, TrainLog,
};

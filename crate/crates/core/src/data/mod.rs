//! Datasets, preprocessing, synthetic stand-ins, features and metrics.

mod bundle;
mod features;
mod io;
pub mod metrics;
mod noise;
mod pca;
pub mod pipeline;
mod synth;

pub use bundle::{standardize_signals, DatasetBundle, InputKind, Split, Standardization, STD_FLOOR};
pub use features::{statistical_features, FEATURE_COUNT};
pub use io::{
    decode_cifar, encode_cifar, format_csv, load_cifar_binary, load_image_csv, load_signal_csv, parse_image_csv,
    parse_signal_csv, write_cifar_binary, write_csv, CIFAR_RECORD, CIFAR_SIDE,
};
pub use metrics::{accuracy, confusion_matrix, weighted_f1};
pub use noise::{corrupt_with_sigma, gaussian_corrupt, NoiseLevel};
pub use pca::Pca;
pub use synth::{signal_band, synth_images, synth_signals};

//! Persistence diagrams and images of signals and images, plus the
//! convolutional surrogates that learn to predict them.

pub mod codec;
pub mod data;
pub mod error;
pub mod filtration;
pub mod models;
pub mod nn;
pub mod pimage;
pub mod rips;
pub mod rng;
pub mod types;

pub use error::{Error, Result};
pub use filtration::{frame_pds, sublevel_pd, SignalFrame};
pub use nn::{LayerStack, Tensor};
pub use pimage::{default_spec, pd_to_pi, pds_to_pi_stack, DatasetTag};
pub use rips::{image_pds, image_to_cloud, rips_pd1, PointCloud3};
pub use rng::Rng;
pub use types::{PersistenceDiagram, PersistenceImage, PersistenceImageSpec, PersistencePoint};

//! Ground-truth persistence images for whole datasets.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filtration::{frame_pds, SignalFrame};
use crate::nn::Tensor;
use crate::pimage::pds_to_pi_stack;
use crate::rips::image_pds;
use crate::types::{PersistenceDiagram, PersistenceImage, PersistenceImageSpec};

/// Diagrams of every frame of `[N, t, n]` signals.
pub fn signal_diagrams(inputs: &Tensor<f32>) -> Result<Vec<Vec<PersistenceDiagram>>> {
    let &[_, t, n] = inputs.shape() else {
        return Err(Error::invalid(format!("signals must be [N, t, n], got {:?}", inputs.shape())));
    };
    (0..inputs.batch())
        .into_par_iter()
        .map(|i| frame_pds(&SignalFrame::from_f32(t, n, inputs.sample(i))?))
        .collect()
}

/// Dimension-1 diagrams of every image of `[N, h, w, c]` inputs.
pub fn image_diagrams(inputs: &Tensor<f32>, lifetime_floor: f64) -> Result<Vec<Vec<PersistenceDiagram>>> {
    let &[_, h, w, c] = inputs.shape() else {
        return Err(Error::invalid(format!("images must be [N, h, w, c], got {:?}", inputs.shape())));
    };
    (0..inputs.batch())
        .into_par_iter()
        .map(|i| image_pds(inputs.sample(i), h, w, c, lifetime_floor))
        .collect()
}

/// Stacks per-sample images into `[N, rows, cols, channels]`.
pub fn images_to_tensor(images: &[PersistenceImage]) -> Result<Tensor<f32>> {
    let first = images.first().ok_or_else(|| Error::invalid("no persistence images"))?;
    let shape = vec![images.len(), first.rows(), first.cols(), first.channels()];
    let mut data = Vec::with_capacity(shape.iter().product());
    for im in images {
        if (im.rows(), im.cols(), im.channels()) != (first.rows(), first.cols(), first.channels()) {
            return Err(Error::invalid("persistence images differ in shape"));
        }
        data.extend_from_slice(im.data());
    }
    Tensor::new(shape, data)
}

pub fn diagrams_to_images(pds: &[Vec<PersistenceDiagram>], spec: &PersistenceImageSpec) -> Result<Vec<PersistenceImage>> {
    pds.par_iter().map(|d| pds_to_pi_stack(d, spec)).collect()
}

/// `[N, rows, cols, n]` persistence-image targets for `[N, t, n]` signals.
pub fn signal_targets(inputs: &Tensor<f32>, spec: &PersistenceImageSpec) -> Result<Tensor<f32>> {
    images_to_tensor(&diagrams_to_images(&signal_diagrams(inputs)?, spec)?)
}

/// `[N, rows, cols, c]` targets for `[N, h, w, c]` images; diagram points
/// below the spec's lifetime floor are dropped.
pub fn image_targets(inputs: &Tensor<f32>, spec: &PersistenceImageSpec) -> Result<Tensor<f32>> {
    images_to_tensor(&diagrams_to_images(&image_diagrams(inputs, spec.lifetime_floor)?, spec)?)
}

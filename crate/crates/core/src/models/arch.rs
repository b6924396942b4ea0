//! Layer-stack builders for the surrogates and the classifiers.

use crate::data::Pca;
use crate::error::{Error, Result};
use crate::nn::{Activation, LayerStack, Scalar, Src, StackBuilder};
use crate::pimage::GRID;
use crate::rng::Rng;

/// Width of the auxiliary feature vector fused into classifiers.
pub const FUSION_DIM: usize = 32;

/// Signal surrogate widths; the defaults are the full-size network.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSurrogateConfig {
    pub widths: [usize; 4],
    pub grid: usize,
}

impl Default for SignalSurrogateConfig {
    fn default() -> Self {
        SignalSurrogateConfig {
            widths: [128, 256, 512, 1024],
            grid: GRID,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSurrogateConfig {
    pub filters: usize,
    /// Output side; the latent is a `grid x grid` map and the transposed
    /// convolution kernel is `grid` wide.
    pub grid: usize,
}

impl Default for ImageSurrogateConfig {
    fn default() -> Self {
        ImageSurrogateConfig {
            filters: 128,
            grid: GRID,
        }
    }
}

/// Signal frame `t x n` to an `grid x grid x n` persistence image.
///
/// Three conv-BN-ReLU-maxpool(3, 2) stages, a fourth conv stage closed by
/// global averaging, then a ReLU dense head reshaped to the image.
pub fn build_signal_surrogate<T: Scalar>(
    t: usize,
    n: usize,
    cfg: &SignalSurrogateConfig,
    rng: &mut Rng,
) -> Result<LayerStack<T>> {
    if t < 16 {
        return Err(Error::invalid(format!(
            "signal surrogate needs at least 16 time steps for three stride-2 pools, got {t}"
        )));
    }
    if n == 0 || cfg.grid == 0 {
        return Err(Error::invalid("signal surrogate needs n >= 1 and a non-empty grid"));
    }
    let g = cfg.grid;
    let mut b = StackBuilder::<T>::new(&[t, n]);
    for &w in &cfg.widths[..3] {
        b = b.conv1d(w, 3, rng).batchnorm().relu().maxpool1d(3, 2);
    }
    b = b
        .conv1d(cfg.widths[3], 3, rng)
        .batchnorm()
        .relu()
        .global_avg_pool()
        .dense(g * g * n, rng)
        .relu()
        .reshape(&[g, g, n]);
    b.build()
}

/// Image `h x w x c` to a `grid x grid x c` persistence image.
///
/// Four conv-BN-ReLU stages (the first three max-pooled), global averaging, a
/// linear dense latent reshaped to one `grid x grid` map, and a transposed
/// convolution to `c` channels followed by BN and a sigmoid.
pub fn build_image_surrogate<T: Scalar>(
    h: usize,
    w: usize,
    c: usize,
    cfg: &ImageSurrogateConfig,
    rng: &mut Rng,
) -> Result<LayerStack<T>> {
    if h < 16 || w < 16 {
        return Err(Error::invalid(format!("image surrogate needs at least 16x16 inputs, got {h}x{w}")));
    }
    if c == 0 || cfg.grid == 0 {
        return Err(Error::invalid("image surrogate needs c >= 1 and a non-empty grid"));
    }
    let g = cfg.grid;
    let mut b = StackBuilder::<T>::new(&[h, w, c]);
    for _ in 0..3 {
        b = b.conv2d(cfg.filters, 3, rng).batchnorm().relu().maxpool2d(3, 2);
    }
    b = b
        .conv2d(cfg.filters, 3, rng)
        .batchnorm()
        .relu()
        .global_avg_pool()
        .dense(g * g, rng)
        .reshape(&[g, g, 1])
        .conv_transpose2d(c, g, rng)
        .batchnorm()
        .activation(Activation::Sigmoid);
    b.build()
}

/// Eight dense(128)-ReLU-dropout(0.2)-BN blocks and a softmax head.
pub fn build_mlp<T: Scalar>(input_dim: usize, classes: usize, rng: &mut Rng) -> Result<LayerStack<T>> {
    if input_dim == 0 || classes < 2 {
        return Err(Error::invalid("mlp needs a non-empty input and at least two classes"));
    }
    let mut b = StackBuilder::<T>::new(&[input_dim]);
    for _ in 0..8 {
        b = b.dense(128, rng).relu().dropout(0.2).batchnorm();
    }
    b.dense(classes, rng).activation(Activation::Softmax).build()
}

/// Auxiliary path merged at a classifier's penultimate layer.
#[derive(Debug, Clone)]
pub enum FusionHead {
    /// A fitted 32-component PCA of vectorised persistence images, applied
    /// outside the network and fed as a second input.
    PcaConcat(Pca),
    /// Persistence image `rows x cols x channels` through conv2d(32, 3) and
    /// global averaging.
    ConvGapConcat { pi_shape: [usize; 3] },
}

impl FusionHead {
    fn aux_input(&self) -> Result<Vec<usize>> {
        match self {
            FusionHead::PcaConcat(pca) => {
                if pca.components() != FUSION_DIM {
                    return Err(Error::invalid(format!(
                        "fusion PCA must keep {FUSION_DIM} components, has {}",
                        pca.components()
                    )));
                }
                Ok(vec![FUSION_DIM])
            }
            FusionHead::ConvGapConcat { pi_shape } => Ok(pi_shape.to_vec()),
        }
    }

    /// Adds the auxiliary path to `b` reading `Src::Input(1)`; returns the
    /// node holding the 32-dim vector.
    fn attach<T: Scalar>(&self, b: StackBuilder<T>, rng: &mut Rng) -> (StackBuilder<T>, Src) {
        match self {
            FusionHead::PcaConcat(_) => (b, Src::Input(1)),
            FusionHead::ConvGapConcat { .. } => {
                let b = b.from(Src::Input(1)).conv2d(FUSION_DIM, 3, rng).global_avg_pool();
                let s = b.cursor();
                (b, s)
            }
        }
    }
}

fn builder_for<T: Scalar>(main: &[usize], fusion: Option<&FusionHead>) -> Result<StackBuilder<T>> {
    Ok(match fusion {
        None => StackBuilder::new(main),
        Some(f) => StackBuilder::with_inputs(&[main, &f.aux_input()?]),
    })
}

/// Concatenates the fusion vector after `features` (when fusing) and closes
/// with dense(classes)-softmax.
fn classifier_head<T: Scalar>(
    b: StackBuilder<T>,
    classes: usize,
    fusion: Option<&FusionHead>,
    rng: &mut Rng,
) -> Result<LayerStack<T>> {
    let b = match fusion {
        None => b,
        Some(f) => {
            let features = b.cursor();
            let (b, aux) = f.attach(b, rng);
            b.concat(&[features, aux])
        }
    };
    b.dense(classes, rng).activation(Activation::Softmax).build()
}

/// Ten conv1d(32, 3)-BN-ReLU stages; max-pools (window 3) alternate stride 1
/// and 2 and the tenth stage ends in global averaging instead.
pub fn build_cnn1d<T: Scalar>(
    t: usize,
    n: usize,
    classes: usize,
    fusion: Option<&FusionHead>,
    rng: &mut Rng,
) -> Result<LayerStack<T>> {
    if t == 0 || n == 0 || classes < 2 {
        return Err(Error::invalid("cnn1d needs a non-empty frame and at least two classes"));
    }
    let mut b = builder_for::<T>(&[t, n], fusion)?;
    for layer in 1..=10 {
        b = b.conv1d(32, 3, rng).batchnorm().relu();
        b = if layer == 10 {
            b.global_avg_pool()
        } else {
            b.maxpool1d(3, if layer % 2 == 1 { 1 } else { 2 })
        };
    }
    classifier_head(b, classes, fusion, rng)
}

/// Hyperparameters of the densely connected image classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetConfig {
    pub depth: usize,
    pub blocks: usize,
    pub initial_filters: usize,
    pub growth: usize,
    pub dropout: f64,
    pub weight_decay: f64,
}

impl Default for DenseNetConfig {
    fn default() -> Self {
        DenseNetConfig {
            depth: 16,
            blocks: 4,
            initial_filters: 16,
            growth: 12,
            dropout: 0.2,
            weight_decay: 1e-4,
        }
    }
}

impl DenseNetConfig {
    pub fn layers_per_block(&self) -> Result<usize> {
        if self.blocks == 0 || self.depth < 4 || !(self.depth - 4).is_multiple_of(self.blocks) {
            return Err(Error::invalid(format!(
                "depth - 4 = {} is not divisible by {} blocks",
                self.depth.saturating_sub(4),
                self.blocks
            )));
        }
        Ok((self.depth - 4) / self.blocks)
    }

    /// Channels reaching global pooling (no transition compression).
    pub fn feature_width(&self) -> Result<usize> {
        Ok(self.initial_filters + self.blocks * self.layers_per_block()? * self.growth)
    }
}

/// Initial conv, dense blocks of BN-ReLU-conv(growth, 3)-dropout layers whose
/// outputs concatenate onto their input, BN-ReLU-conv1x1-maxpool(2, 2)
/// transitions, then BN-ReLU-global averaging and a softmax head.
pub fn build_dense_classifier<T: Scalar>(
    h: usize,
    w: usize,
    c: usize,
    classes: usize,
    cfg: &DenseNetConfig,
    fusion: Option<&FusionHead>,
    rng: &mut Rng,
) -> Result<LayerStack<T>> {
    let per_block = cfg.layers_per_block()?;
    if h == 0 || w == 0 || c == 0 || classes < 2 {
        return Err(Error::invalid("dense classifier needs a non-empty image and at least two classes"));
    }
    let mut b = builder_for::<T>(&[h, w, c], fusion)?
        .weight_decay(cfg.weight_decay)
        .conv2d(cfg.initial_filters, 3, rng);
    let mut channels = cfg.initial_filters;
    for block in 0..cfg.blocks {
        for _ in 0..per_block {
            let trunk = b.cursor();
            b = b.batchnorm().relu().conv2d(cfg.growth, 3, rng).dropout(cfg.dropout);
            let fresh = b.cursor();
            b = b.concat(&[trunk, fresh]);
            channels += cfg.growth;
        }
        if block + 1 < cfg.blocks {
            b = b.batchnorm().relu().conv2d(channels, 1, rng).maxpool2d(2, 2);
        }
    }
    b = b.batchnorm().relu().global_avg_pool();
    classifier_head(b, classes, fusion, rng)
}

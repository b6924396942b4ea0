use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::Rng;

/// Gaussian corruption severities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum NoiseLevel {
    L1,
    L2,
    L3,
    L4,
}

impl NoiseLevel {
    pub const ALL: [NoiseLevel; 4] = [NoiseLevel::L1, NoiseLevel::L2, NoiseLevel::L3, NoiseLevel::L4];

    pub fn sigma(self) -> f64 {
        match self {
            NoiseLevel::L1 => 0.02,
            NoiseLevel::L2 => 0.04,
            NoiseLevel::L3 => 0.06,
            NoiseLevel::L4 => 0.08,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            NoiseLevel::L1 => "L1",
            NoiseLevel::L2 => "L2",
            NoiseLevel::L3 => "L3",
            NoiseLevel::L4 => "L4",
        }
    }

    pub fn parse(tag: &str) -> Result<Self> {
        match tag.to_ascii_uppercase().as_str() {
            "L1" => Ok(NoiseLevel::L1),
            "L2" => Ok(NoiseLevel::L2),
            "L3" => Ok(NoiseLevel::L3),
            "L4" => Ok(NoiseLevel::L4),
            other => Err(Error::invalid(format!("unknown noise level {other:?} (expected L1..L4)"))),
        }
    }
}

/// `clip(x + N(0, sigma^2), 0, 1)` elementwise.
pub fn corrupt_with_sigma(pixels: &[f32], sigma: f64, rng: &mut Rng) -> Vec<f32> {
    pixels
        .iter()
        .map(|&x| (x as f64 + sigma * rng.normal()).clamp(0.0, 1.0) as f32)
        .collect()
}

pub fn gaussian_corrupt(images: &Tensor<f32>, level: NoiseLevel, rng: &mut Rng) -> Result<Tensor<f32>> {
    if let Some(v) = images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("pixel {v} outside [0, 1]")));
    }
    Tensor::new(images.shape().to_vec(), corrupt_with_sigma(images.data(), level.sigma(), rng))
}

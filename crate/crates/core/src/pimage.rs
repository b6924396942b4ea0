//! Persistence images: lifetime-weighted Gaussians integrated exactly over
//! each grid box, then scaled so the brightest bin is 1.

use crate::error::{Error, Result};
use crate::types::{PersistenceDiagram, PersistenceImage, PersistenceImageSpec};

/// Named parameter presets for the supported data sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetTag {
    Signal,
    Cifar,
    Svhn,
}

impl DatasetTag {
    pub fn parse(tag: &str) -> Result<Self> {
        match tag.to_ascii_lowercase().as_str() {
            "signal" => Ok(DatasetTag::Signal),
            "cifar" => Ok(DatasetTag::Cifar),
            "svhn" => Ok(DatasetTag::Svhn),
            other => Err(Error::invalid(format!(
                "unknown dataset tag {other:?} (expected signal, cifar or svhn)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DatasetTag::Signal => "signal",
            DatasetTag::Cifar => "cifar",
            DatasetTag::Svhn => "svhn",
        }
    }
}

pub const GRID: usize = 50;

/// 50x50 grid presets. The lifetime axis spans the birth axis width for
/// signals and [0, birth_max] for images; images drop points living less than
/// 0.02.
pub fn default_spec(tag: DatasetTag) -> PersistenceImageSpec {
    let (birth_range, lifetime_range, kernel_sigma, lifetime_floor) = match tag {
        DatasetTag::Signal => ((-10.0, 10.0), (0.0, 20.0), 0.25, 0.0),
        DatasetTag::Cifar => ((0.0, 0.3), (0.0, 0.3), 0.01, 0.02),
        DatasetTag::Svhn => ((0.0, 0.2), (0.0, 0.2), 0.005, 0.02),
    };
    PersistenceImageSpec {
        rows: GRID,
        cols: GRID,
        birth_range,
        lifetime_range,
        kernel_sigma,
        lifetime_floor,
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Gaussian mass of each interval `[edges[i], edges[i+1]]` for a kernel
/// centred at `mu`.
fn interval_masses(edges: &[f64], mu: f64, sigma: f64) -> Vec<f64> {
    let cdf: Vec<f64> = edges.iter().map(|&e| normal_cdf((e - mu) / sigma)).collect();
    cdf.windows(2).map(|w| w[1] - w[0]).collect()
}

fn axis_edges(range: (f64, f64), bins: usize) -> Vec<f64> {
    let step = (range.1 - range.0) / bins as f64;
    (0..=bins)
        .map(|i| if i == bins { range.1 } else { range.0 + step * i as f64 })
        .collect()
}

/// Un-normalised bins (rows x cols, lifetime-major) of the persistence
/// surface. Points outside the ranges still contribute their tail mass.
pub fn persistence_surface_bins(
    pd: &PersistenceDiagram,
    spec: &PersistenceImageSpec,
) -> Result<Vec<f64>> {
    spec.validate()?;
    let birth_edges = axis_edges(spec.birth_range, spec.cols);
    let life_edges = axis_edges(spec.lifetime_range, spec.rows);
    let mut bins = vec![0.0; spec.rows * spec.cols];
    for p in pd.points() {
        if !p.birth.is_finite() || !p.lifetime.is_finite() {
            return Err(Error::invalid("non-finite persistence point"));
        }
        if p.lifetime < spec.lifetime_floor {
            continue;
        }
        let bx = interval_masses(&birth_edges, p.birth, spec.kernel_sigma);
        let ly = interval_masses(&life_edges, p.lifetime, spec.kernel_sigma);
        for (r, &my) in ly.iter().enumerate() {
            let wy = p.lifetime * my;
            if wy == 0.0 {
                continue;
            }
            let row = &mut bins[r * spec.cols..(r + 1) * spec.cols];
            for (b, &mx) in row.iter_mut().zip(&bx) {
                *b += wy * mx;
            }
        }
    }
    Ok(bins)
}

/// Single-channel persistence image normalised to a maximum of 1 (left all
/// zero when the diagram carries no mass).
pub fn pd_to_pi(pd: &PersistenceDiagram, spec: &PersistenceImageSpec) -> Result<PersistenceImage> {
    let bins = persistence_surface_bins(pd, spec)?;
    let max = bins.iter().cloned().fold(0.0, f64::max);
    let data = if max > 0.0 {
        bins.iter().map(|&v| (v / max) as f32).collect()
    } else {
        vec![0.0; bins.len()]
    };
    PersistenceImage::new(spec.rows, spec.cols, 1, data)
}

/// Stacks one normalised channel per diagram.
pub fn pds_to_pi_stack(
    pds: &[PersistenceDiagram],
    spec: &PersistenceImageSpec,
) -> Result<PersistenceImage> {
    let channels = pds
        .iter()
        .map(|pd| pd_to_pi(pd, spec))
        .collect::<Result<Vec<_>>>()?;
    PersistenceImage::stack(&channels)
}

//! Persistence diagrams and persistence images.

use crate::error::{Error, Result};

/// A single (birth, lifetime) point of a persistence diagram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PersistencePoint {
    pub birth: f64,
    pub lifetime: f64,
}

impl PersistencePoint {
    pub fn new(birth: f64, lifetime: f64) -> Result<Self> {
        let p = PersistencePoint { birth, lifetime };
        p.validate()?;
        Ok(p)
    }

    pub fn death(&self) -> f64 {
        self.birth + self.lifetime
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !self.birth.is_finite() || !self.lifetime.is_finite() {
            return Err(Error::invalid(format!(
                "non-finite persistence point ({}, {})",
                self.birth, self.lifetime
            )));
        }
        if self.lifetime < 0.0 {
            return Err(Error::invalid(format!(
                "negative lifetime {} at birth {}",
                self.lifetime, self.birth
            )));
        }
        Ok(())
    }
}

/// Multiset of persistence points for one homology dimension (0 or 1).
#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceDiagram {
    dimension: u8,
    points: Vec<PersistencePoint>,
}

impl PersistenceDiagram {
    pub fn new(dimension: u8, points: Vec<PersistencePoint>) -> Result<Self> {
        if dimension > 1 {
            return Err(Error::invalid(format!(
                "homology dimension {dimension} not supported"
            )));
        }
        for p in &points {
            p.validate()?;
        }
        Ok(PersistenceDiagram { dimension, points })
    }

    pub fn empty(dimension: u8) -> Self {
        assert!(dimension <= 1, "homology dimension must be 0 or 1");
        PersistenceDiagram {
            dimension,
            points: Vec::new(),
        }
    }

    /// Builds a diagram from `(birth, lifetime)` tuples.
    pub fn from_pairs(dimension: u8, pairs: &[(f64, f64)]) -> Result<Self> {
        let points = pairs
            .iter()
            .map(|&(b, l)| PersistencePoint::new(b, l))
            .collect::<Result<Vec<_>>>()?;
        Self::new(dimension, points)
    }

    pub fn dimension(&self) -> u8 {
        self.dimension
    }

    pub fn points(&self) -> &[PersistencePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sorts points by (birth, lifetime).
    pub fn sorted(mut self) -> Self {
        self.points.sort_by(|a, b| {
            a.birth
                .total_cmp(&b.birth)
                .then(a.lifetime.total_cmp(&b.lifetime))
        });
        self
    }

    pub fn total_lifetime(&self) -> f64 {
        self.points.iter().map(|p| p.lifetime).sum()
    }
}

/// Grid and kernel parameters for rasterizing a persistence diagram.
///
/// Columns index the birth axis, rows index the lifetime axis, both ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceImageSpec {
    pub rows: usize,
    pub cols: usize,
    pub birth_range: (f64, f64),
    pub lifetime_range: (f64, f64),
    pub kernel_sigma: f64,
    /// Points with lifetime strictly below this are discarded.
    pub lifetime_floor: f64,
}

impl PersistenceImageSpec {
    pub fn validate(&self) -> Result<()> {
        let (b0, b1) = self.birth_range;
        let (l0, l1) = self.lifetime_range;
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::invalid("persistence image grid must be at least 1x1"));
        }
        if !(b1 > b0) || !b0.is_finite() || !b1.is_finite() {
            return Err(Error::invalid(format!("bad birth range [{b0}, {b1}]")));
        }
        if !(l1 > l0) || !l0.is_finite() || !l1.is_finite() {
            return Err(Error::invalid(format!("bad lifetime range [{l0}, {l1}]")));
        }
        if !(self.kernel_sigma > 0.0) || !self.kernel_sigma.is_finite() {
            return Err(Error::invalid(format!(
                "kernel sigma must be positive, got {}",
                self.kernel_sigma
            )));
        }
        if !(self.lifetime_floor >= 0.0) {
            return Err(Error::invalid("lifetime floor must be non-negative"));
        }
        Ok(())
    }

    pub fn bin_count(&self) -> usize {
        self.rows * self.cols
    }
}

/// A rows x cols x channels raster with entries in [0, 1], stored row-major
/// with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceImage {
    rows: usize,
    cols: usize,
    channels: usize,
    data: Vec<f32>,
}

impl PersistenceImage {
    pub fn new(rows: usize, cols: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 || channels == 0 {
            return Err(Error::invalid(format!(
                "persistence image dimensions must be positive, got {rows}x{cols}x{channels}"
            )));
        }
        if data.len() != rows * cols * channels {
            return Err(Error::invalid(format!(
                "persistence image data length {} does not match {rows}x{cols}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!(
                "persistence image entry {v} outside [0, 1]"
            )));
        }
        Ok(PersistenceImage {
            rows,
            cols,
            channels,
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize, channels: usize) -> Self {
        assert!(rows > 0 && cols > 0 && channels > 0);
        PersistenceImage {
            rows,
            cols,
            channels,
            data: vec![0.0; rows * cols * channels],
        }
    }

    /// Interleaves single-channel images into one multi-channel image.
    pub fn stack(images: &[PersistenceImage]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::invalid("cannot stack zero persistence images"))?;
        let (rows, cols) = (first.rows, first.cols);
        let channels: usize = images.iter().map(|im| im.channels).sum();
        let mut data = Vec::with_capacity(rows * cols * channels);
        for im in images {
            if im.rows != rows || im.cols != cols {
                return Err(Error::invalid("stacked persistence images differ in grid size"));
            }
        }
        for px in 0..rows * cols {
            for im in images {
                data.extend_from_slice(&im.data[px * im.channels..(px + 1) * im.channels]);
            }
        }
        Ok(PersistenceImage {
            rows,
            cols,
            channels,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * self.cols + col) * self.channels + channel]
    }

    /// Copies one channel out as a single-channel image.
    pub fn channel(&self, channel: usize) -> PersistenceImage {
        assert!(channel < self.channels);
        let data = self
            .data
            .iter()
            .skip(channel)
            .step_by(self.channels)
            .copied()
            .collect();
        PersistenceImage {
            rows: self.rows,
            cols: self.cols,
            channels: 1,
            data,
        }
    }

    pub fn channel_max(&self, channel: usize) -> f32 {
        self.data
            .iter()
            .skip(channel)
            .step_by(self.channels)
            .fold(0.0f32, |m, &v| m.max(v))
    }
}

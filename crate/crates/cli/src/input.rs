//! Dataset files named by a config or by flags.

use std::path::Path;

use topopi_core::data::{
    load_cifar_binary, load_image_csv, load_signal_csv, write_cifar_binary, write_csv, DatasetBundle, InputKind,
    CIFAR_SIDE,
};

use crate::config::{parse_shape, RunConfig};
use crate::error::{usage, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    /// Rows of `t * n` values plus a label.
    SignalCsv,
    /// Rows of `h * w * c` pixels in [0, 1] plus a label.
    ImageCsv,
    /// CIFAR binary batches (32x32x3).
    Cifar,
}

impl Format {
    pub fn parse(tag: &str) -> CliResult<Self> {
        match tag {
            "signal-csv" => Ok(Format::SignalCsv),
            "image-csv" => Ok(Format::ImageCsv),
            "cifar" => Ok(Format::Cifar),
            other => Err(usage(format!(
                "unknown format {other:?} (expected signal-csv, image-csv or cifar)"
            ))),
        }
    }

    pub fn kind(self) -> InputKind {
        match self {
            Format::SignalCsv => InputKind::Signal,
            Format::ImageCsv | Format::Cifar => InputKind::Image,
        }
    }
}

/// Where and how a dataset is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSource {
    pub format: Format,
    /// Per-sample shape; fixed for CIFAR.
    pub shape: Vec<usize>,
}

impl DataSource {
    pub fn new(format: Format, shape: Option<&str>) -> CliResult<Self> {
        let shape = match (format, shape) {
            (Format::Cifar, None) => vec![CIFAR_SIDE, CIFAR_SIDE, 3],
            (Format::Cifar, Some(s)) => {
                let s = parse_shape(s)?;
                if s != [CIFAR_SIDE, CIFAR_SIDE, 3] {
                    return Err(usage("CIFAR batches are 32x32x3"));
                }
                s
            }
            (_, None) => return Err(usage("csv inputs need a shape (e.g. 250x3 or 16x16x3)")),
            (_, Some(s)) => parse_shape(s)?,
        };
        let rank = match format.kind() {
            InputKind::Signal => 2,
            InputKind::Image => 3,
        };
        if shape.len() != rank {
            return Err(usage(format!("{format:?} needs a rank-{rank} shape, got {shape:?}")));
        }
        Ok(DataSource { format, shape })
    }

    pub fn from_config(cfg: &RunConfig) -> CliResult<Self> {
        Self::new(Format::parse(cfg.require("format")?)?, cfg.get("shape"))
    }

    pub fn load(&self, path: &Path) -> CliResult<DatasetBundle> {
        let s = &self.shape;
        Ok(match self.format {
            Format::SignalCsv => load_signal_csv(path, s[0], s[1])?,
            Format::ImageCsv => load_image_csv(path, s[0], s[1], s[2])?,
            Format::Cifar => load_cifar_binary(path)?,
        })
    }

    pub fn write(&self, path: &Path, bundle: &DatasetBundle) -> CliResult<()> {
        match self.format {
            Format::Cifar => write_cifar_binary(path, bundle)?,
            _ => write_csv(path, bundle)?,
        }
        Ok(())
    }
}

//! Library side of the `topopi` binary: run configuration, data loading,
//! model directories and the subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod input;
pub mod model;

pub use commands::{BenchReport, BenchRow, Report};
pub use config::RunConfig;
pub use error::{CliError, CliResult};
pub use input::{DataSource, Format};
pub use model::{Model, ModelKind, ModelMeta};

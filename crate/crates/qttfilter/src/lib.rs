//! File formats, configuration and experiment runners for the QTT nonlinear
//! filter. The numerical work lives in `qttfilter-core`; this crate adds IO,
//! threads and timing.

pub mod bundle;
pub mod config;
pub mod error;
pub mod run;
pub mod truth_io;

pub use config::{Backend, ExperimentConfig, FileConfig, Overrides};
pub use error::{CliError, CliResult};

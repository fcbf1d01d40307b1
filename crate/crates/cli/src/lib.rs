//! IO companion to `convmg-core`: JSON run configuration, the on-disk
//! multilevel dataset format, the equivalence verification suite, and the
//! CSV/JSON reports behind the CLI subcommands.

// negated float comparisons are NaN guards; index loops mirror matrix formulas
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod dataset;
pub mod reports;
pub mod verify;

use std::fmt;

/// Unified error for the IO layer.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(std::io::Error),
    Json(serde_json::Error),
    Core(String),
    Dataset(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(s) => write!(f, "config error: {s}"),
            CliError::Io(e) => write!(f, "io error: {e}"),
            CliError::Json(e) => write!(f, "json error: {e}"),
            CliError::Core(s) => write!(f, "{s}"),
            CliError::Dataset(s) => write!(f, "dataset error: {s}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Json(e)
    }
}

macro_rules! core_error_from {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.to_string())
            }
        })*
    };
}

core_error_from!(
    convmg_core::grid::GridError,
    convmg_core::fields::FieldError,
    convmg_core::fe::FeError,
    convmg_core::multigrid::MgError,
    convmg_core::convnet::ConvError,
    convmg_core::mldata::DataError,
    convmg_core::metrics::MetricsError,
    convmg_core::linalg::LinalgError
);

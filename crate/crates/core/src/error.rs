use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch in {dim}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        dim: String,
        expected: String,
        got: String,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("class index {index} out of range for {classes} classes")]
    InvalidLabel { index: usize, classes: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("invalid model spec: {0}")]
    Spec(String),

    #[error("unknown filter coordinate (layer {layer}, filter {filter})")]
    UnknownFilter { layer: usize, filter: usize },

    #[error("pruning would leave layer {layer} with {remaining} filters, floor is {floor}")]
    FilterFloor {
        layer: usize,
        remaining: usize,
        floor: usize,
    },

    #[error("only {available} removable filters, {requested} requested")]
    NotEnoughFilters { available: usize, requested: usize },

    #[error("accumulator key mismatch: {0}")]
    KeyMismatch(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("{} config errors:{}", .0.len(), list_paths(.0))]
    ConfigList(Vec<(String, String)>),

    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },

    #[error("no pairable parameter levels between runs: {0}")]
    NoPairs(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("csv schema violation in {path}: {msg}")]
    CsvSchema { path: PathBuf, msg: String },
}

fn list_paths(errs: &[(String, String)]) -> String {
    errs.iter().map(|(p, m)| format!("\n  `{p}`: {m}")).collect()
}

impl Error {
    pub(crate) fn shape(
        op: &'static str,
        dim: impl Into<String>,
        expected: impl ToString,
        got: impl ToString,
    ) -> Self {
        Error::Shape {
            op,
            dim: dim.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// True for errors caused by user-supplied configuration rather than runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::ConfigList(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

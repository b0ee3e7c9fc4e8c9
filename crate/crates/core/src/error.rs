use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: String,
        expected: String,
        found: String,
    },

    #[error("input entry {index} = {value} lies outside [0, 1]")]
    InputRange { index: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("weight file {path}: {message}")]
    WeightFile { path: PathBuf, message: String },

    #[error("IDX file {path} at byte {offset}: {message}")]
    Idx {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("no ghost neuron found: {0}")]
    NoGhost(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

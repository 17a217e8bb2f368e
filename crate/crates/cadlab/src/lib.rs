//! File formats, configuration, experiment runs and the command line
//! around `cadlab-core`.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod formats;
pub mod run;
pub mod sweep;
pub mod tables;

use std::path::{Path, PathBuf};

pub use config::RunConfig;
pub use dataset::{load_dataset, read_dataset, save_dataset, write_dataset};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Stream(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Record { line: usize, msg: String },
    #[error("{path}: {inner}")]
    InFile { path: PathBuf, inner: Box<Error> },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Schema(#[from] cadlab_core::scm::SchemaError),
    #[error(transparent)]
    Mask(#[from] cadlab_core::scm::MaskError),
    #[error(transparent)]
    Train(#[from] cadlab_core::train::TrainError),
    #[error(transparent)]
    Model(#[from] cadlab_core::model::ModelError),
    #[error(transparent)]
    Mdm(#[from] cadlab_core::mdm::MdmError),
    #[error(transparent)]
    Metric(#[from] cadlab_core::metrics::MetricError),
    #[error(transparent)]
    Analysis(#[from] cadlab_core::analysis::AnalysisError),
    #[error(transparent)]
    Tensor(#[from] cadlab_core::tensor::TensorError),
}

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn in_file(self, path: &Path) -> Self {
        match self {
            e @ (Error::Io { .. } | Error::InFile { .. }) => e,
            e => Error::InFile {
                path: path.to_path_buf(),
                inner: Box::new(e),
            },
        }
    }
}

//! Datasets, synthetic pages, the two-stage run, parameter files and
//! ablations.

mod ablation;
mod dataset;
mod persist;
mod run;
mod synth;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::encoder::ModelError;
use crate::graph::GraphError;
use crate::html_dom::DomError;
use crate::metrics::MetricsError;
use crate::span_qa::QaError;

pub use ablation::{mask_report, Ablation, KindDensity, MaskReport};
pub use dataset::{
    load_dataset, load_pages, AnswerRecord, Dataset, Example, Page, PageRecord, PagesFile, QaFile, QaRecord,
};
pub use persist::{
    load_params, load_qa_params, read_params, read_qa_params, save_params, save_qa_params, sidecar_path,
    write_params, write_qa_params, FORMAT_VERSION, QA_MAGIC, TIE_MAGIC,
};
pub use run::{
    node_examples, read_predictions, run_batch, run_two_stage, write_predictions, FailedExample, Prediction,
    PredictionRecord,
};
pub use synth::{generate_synthetic, Layout, SyntheticSet};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}:{line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("example {qid} refers to unknown page {page_id}")]
    DanglingPageRef { qid: String, page_id: String },
    #[error("page {page_id}: box key {key} is out of range for {nodes} nodes")]
    BoxKeyOutOfRange {
        page_id: String,
        key: usize,
        nodes: usize,
    },
    #[error("page {page_id}: {source}")]
    Page { page_id: String, source: DomError },
    #[error("page {page_id}: {source}")]
    Graph { page_id: String, source: GraphError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Qa(#[from] QaError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}: not a parameter file of the expected kind")]
    BadMagic(PathBuf),
    #[error("{path}: format version {found}, expected {expected}")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: {message}")]
    ShapeMismatch { path: PathBuf, message: String },
    #[error("{0}: file ends before the declared arrays")]
    TruncatedFile(PathBuf),
    #[error("invalid ablation: {0}")]
    InvalidAblation(String),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            message: err.to_string(),
        }
    }

    /// Whether the error comes from the request itself rather than from
    /// the data it names.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            PipelineError::InvalidAblation(_) | PipelineError::Model(ModelError::InvalidConfig(_))
        )
    }
}

//! Per-timestamp orchestration, synthetic data, benchmarks and reports.

use std::io;
use std::path::Path;

use thiserror::Error;

use crate::fnn::FnnError;
use crate::rtree::IndexError;
use crate::sgns::EmbedError;
use crate::stream::{NodeId, StreamError};
use crate::walk::WalkError;

pub mod batch;
pub mod bench;
pub mod config;
pub mod run;
pub mod synth;

pub use batch::{build_link_batch, build_node_batch, read_labels, split_holdout, LinkBatch, NodeBatch};
pub use config::PipelineConfig;
pub use run::{execute, load_snapshots, report, run_pipeline, RunOutput, StageMetrics, Summary};
pub use synth::{gen_synthetic, SynthGraph, SynthParams};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Walk(#[from] WalkError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Fnn(#[from] FnnError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("node {0} has no embedding")]
    MissingEmbedding(NodeId),
    #[error("labels: {0}")]
    Label(String),
    #[error("timestamp {index}: {source}")]
    AtTimestamp {
        index: usize,
        #[source]
        source: Box<PipelineError>,
    },
}

impl PipelineError {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        PipelineError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    fn at(self, index: usize) -> Self {
        match self {
            e @ PipelineError::AtTimestamp { .. } => e,
            e => PipelineError::AtTimestamp {
                index,
                source: Box::new(e),
            },
        }
    }
}

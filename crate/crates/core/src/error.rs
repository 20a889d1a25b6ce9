use std::path::PathBuf;

/// Errors surfaced by every stage of the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate point: zero range")]
    DegeneratePoint,
    #[error("empty cloud")]
    EmptyCloud,
    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unmapped label {0}")]
    UnmappedLabel(u32),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("training diverged at step {step}: {what} is not finite")]
    TrainingDiverged { step: u64, what: &'static str },
    #[error("malformed scan: {len} bytes is not a multiple of 16")]
    MalformedScan { len: u64 },
    #[error("empty scan")]
    EmptyScan,
    #[error("label/scan mismatch: {labels} labels for {points} points")]
    LabelScanMismatch { labels: u64, points: u64 },
    #[error("malformed label file: {len} bytes is not a multiple of 4")]
    MalformedLabels { len: u64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
    #[error("degenerate scene: {0}")]
    DegenerateScene(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}

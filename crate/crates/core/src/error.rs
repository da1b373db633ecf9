use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("vocabulary build failed: {0}")]
    Build(String),
    #[error("cannot decode token id {id}: vocabulary has {size} entries")]
    Decode { id: u32, size: usize },
    #[error("template error: {0}")]
    Template(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("sample error: {0}")]
    Sample(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numerics error: {0}")]
    Numerics(String),
    #[error("numerics error: training diverged at step {step}")]
    Diverged {
        step: u64,
        last_good: Box<crate::model::ModelCheckpoint>,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("prompt error: {0}")]
    Prompt(String),
    #[error("report error: {0}")]
    Report(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, RbError>;

#[derive(Debug, Error)]
pub enum RbError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("reduced system ill-conditioned (condition estimate {cond:.3e}) for sample {index}")]
    IllConditioned { index: usize, cond: f64 },

    #[error("self-intersecting or degenerate domain: {0}")]
    DegenerateDomain(String),

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<RbError>,
    },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<RbError>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("model file error: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl RbError {
    pub(crate) fn at_sample(index: usize) -> impl FnOnce(RbError) -> RbError {
        move |e| RbError::Sample {
            index,
            source: Box::new(e),
        }
    }

    pub(crate) fn in_stage(stage: &'static str) -> impl FnOnce(RbError) -> RbError {
        move |e| RbError::Stage {
            stage,
            source: Box::new(e),
        }
    }

    /// True for errors caused by user input (config, files) rather than numerics.
    pub fn is_config_error(&self) -> bool {
        match self {
            RbError::Config(_) | RbError::Model(_) | RbError::Io(_) => true,
            RbError::Stage { source, .. } | RbError::Sample { source, .. } => {
                source.is_config_error()
            }
            _ => false,
        }
    }
}

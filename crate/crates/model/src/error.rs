use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Nn(#[from] hava_nn::Error),
    #[error(transparent)]
    Core(#[from] hava_core::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("dataset has no pose track; augment first (`augment --attach`)")]
    MissingPoses,
    #[error("training step {step}: {source}")]
    Step {
        step: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_step(step: u64, source: Error) -> Self {
        Error::Step {
            step,
            source: Box::new(source),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

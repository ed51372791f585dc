use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid stroke: {0}")]
    InvalidStroke(String),

    #[error("degenerate corpus: component {component} has zero spread")]
    DegenerateCorpus { component: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence {
        epoch: usize,
        step: usize,
        loss: f64,
    },

    #[error("pitch {0} cannot be represented in MIDI (0..=127)")]
    InvalidPitch(i32),

    #[error("pitch {pitch} lies outside the vocabulary {low}..{high}")]
    PitchOutOfRange { pitch: u8, low: u8, high: u8 },

    #[error("malformed MIDI data: {0}")]
    Midi(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("simulation diverged at t = {time:.3} s (seed {seed})")]
    SimulationBlowUp { time: f64, seed: u64 },

    #[error("no diagnosis filter exists: {0}")]
    NoFilter(String),

    #[error("no filter detects all attacks in the admissible set: {0}")]
    DetectorInfeasible(String),

    #[error("unbounded: {0}")]
    Unbounded(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("artifact was designed against model hash {expected}, current model hashes to {found}")]
    HashMismatch { expected: String, found: String },

    #[error("artifact invariant violated: {0}")]
    Artifact(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

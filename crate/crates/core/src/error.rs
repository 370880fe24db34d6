use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("spectral consistency error: imaginary residue {residue:e} exceeds guard {limit:e}")]
    SpectralConsistency { residue: f64, limit: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("negative amplitude {value} at index {index}")]
    NegativeAmplitude { index: usize, value: f64 },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing record: {0}")]
    MissingRecord(String),
    #[error("dataset generation failed: {0}")]
    Generation(String),
    #[error("client {client} failed in round {round}: {source}")]
    Client {
        round: usize,
        client: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("design matrix: {0}")]
    Design(String),

    #[error("separation in {model} fit; offending columns: {columns:?}")]
    Separation { model: String, columns: Vec<String> },

    #[error("singular system; linearly dependent columns: {0:?}")]
    Singular(Vec<String>),

    #[error("{model} fit did not converge after {iterations} iterations")]
    NonConvergence { model: String, iterations: usize },

    #[error("bootstrap: {failed} of {total} replicates failed")]
    Bootstrap { failed: usize, total: usize },

    #[error("data: {0}")]
    Data(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

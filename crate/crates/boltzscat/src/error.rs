use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("out of domain: {0}")]
    Domain(String),
    #[error("unsupported range: {0}")]
    Unsupported(String),
    #[error("did not converge after {iters} iterations (last delta {delta:e}, last ratio {ratio:.4})")]
    NotConverged { iters: usize, delta: f64, ratio: f64 },
    #[error("negative or zero density at {0}")]
    Positivity(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

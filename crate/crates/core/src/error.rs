use thiserror::Error;

/// Errors produced anywhere in the toolkit.
///
/// Variants are split so the CLI can map them onto exit codes: validation
/// problems (bad shapes, bad arguments, bad configs and files) exit with 2,
/// numerical failures exit with 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered at {0}")]
    NonFinite(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn non_finite(at: impl Into<String>) -> Self {
        Error::NonFinite(at.into())
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Fails with [`Error::Shape`] unless `got == want`.
pub(crate) fn ensure_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::shape(format!("{what}: expected length {want}, got {got}")))
    }
}

pub(crate) fn ensure_finite(what: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::non_finite(format!("{what}[{i}] = {}", values[i]))),
    }
}

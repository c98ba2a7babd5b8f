use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("component index out of bounds: observation {observation} (n = {n}), component {component} (K = {k})")]
    IndexOutOfBounds {
        observation: usize,
        component: usize,
        n: usize,
        k: usize,
    },

    #[error("numeric domain error in {component}: {detail}")]
    NumericDomain { component: String, detail: String },

    #[error("capability exceeded: {0}")]
    Capability(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("iterate diverged at iteration {iteration}")]
    Divergence {
        iteration: usize,
        last_finite: Vec<f64>,
    },

    #[error("scheme `{0}` does not support recycled sampling")]
    UnsupportedScheme(String),

    #[error("matrix is numerically singular even after diagonal jitter {jitter:e}; consider a longer run or a larger sample")]
    Conditioning { jitter: f64 },

    #[error("step size tuning failed: {0}")]
    Tuning(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn numeric(component: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::NumericDomain {
            component: component.into(),
            detail: detail.into(),
        }
    }

    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Divergence { .. })
    }

    /// Divergence or a component evaluated outside its numeric domain,
    /// which is how a run with too large a step usually fails.
    pub fn is_numerical_failure(&self) -> bool {
        matches!(self, Error::Divergence { .. } | Error::NumericDomain { .. })
    }
}

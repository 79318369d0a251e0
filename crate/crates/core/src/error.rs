use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("quadrature did not converge: estimate {estimate:e}, achieved absolute error {abs_error:e}")]
    Quadrature { estimate: f64, abs_error: f64 },

    #[error("conditional distribution is undefined: {0}")]
    UndefinedConditional(String),

    #[error("optimizer did not converge after {iterations} iterations (last objective {last:e})")]
    NonConvergence {
        iterations: usize,
        last: f64,
        trace: Vec<f64>,
    },

    #[error("estimate on the boundary of the parameter space: {0}")]
    Boundary(String),

    #[error("appointment policy error: {0}")]
    Policy(String),

    #[error("invalid process specification: {0}")]
    Spec(String),

    #[error("record {patient_id}: {source}")]
    Record {
        patient_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn in_record(self, patient_id: &str) -> Error {
        match self {
            e @ Error::Record { .. } => e,
            e => Error::Record {
                patient_id: patient_id.to_string(),
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, looking through record wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Record { source, .. } => source.root(),
            e => e,
        }
    }
}

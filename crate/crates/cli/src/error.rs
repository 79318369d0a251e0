use serde::Serialize;
use thiserror::Error;
use vitalsurv::Error as CoreError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    ConfigFile {
        context: String,
        #[source]
        source: CoreError,
    },

    #[error("{context}: {source}")]
    DataFile {
        context: String,
        #[source]
        source: CoreError,
    },

    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Serialize)]
struct ErrorReport<'a> {
    kind: &'a str,
    message: String,
    exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    patient_id: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<&'a [f64]>,
}

fn core_kind(e: &CoreError) -> (&'static str, i32) {
    match e.root() {
        CoreError::InvalidParameter(_) | CoreError::Spec(_) | CoreError::Json(_) => ("config", 2),
        CoreError::Data(_) | CoreError::Csv(_) | CoreError::Io(_) => ("data", 3),
        CoreError::NonConvergence { .. } => ("non_convergence", 5),
        _ => ("numerical", 4),
    }
}

impl CliError {
    fn kind(&self) -> (&'static str, i32) {
        match self {
            CliError::Config(_) | CliError::ConfigFile { .. } => ("config", 2),
            CliError::DataFile { .. } => ("data", 3),
            CliError::Core(e) => core_kind(e),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind().1
    }

    /// Machine-readable form written to stderr.
    pub fn to_json(&self) -> String {
        let (kind, exit_code) = self.kind();
        let core = match self {
            CliError::Core(e) | CliError::ConfigFile { source: e, .. } | CliError::DataFile { source: e, .. } => Some(e),
            CliError::Config(_) => None,
        };
        let patient_id = match core {
            Some(CoreError::Record { patient_id, .. }) => Some(patient_id.as_str()),
            _ => None,
        };
        let trace = match core.map(CoreError::root) {
            Some(CoreError::NonConvergence { trace, .. }) => Some(trace.as_slice()),
            _ => None,
        };
        let report = ErrorReport { kind, message: self.to_string(), exit_code, patient_id, trace };
        serde_json::to_string(&report).unwrap_or_else(|_| format!("{{\"kind\":\"{kind}\"}}"))
    }
}

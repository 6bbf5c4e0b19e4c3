use pbpm_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("unknown outcome label {label:?}; known labels: {known:?}")]
    UnknownOutcome { label: String, known: Vec<String> },
    #[error("XML error at byte {offset}: {message}")]
    Xml { offset: u64, message: String },
    #[error("case {case_id}, event {index}: {message}")]
    Event {
        case_id: String,
        index: usize,
        message: String,
    },
    #[error("unknown activity label {label:?}{}; nearest known labels: {nearest:?}", case_id.as_ref().map(|c| format!(" in case {c}")).unwrap_or_default())]
    UnknownLabel {
        label: String,
        case_id: Option<String>,
        nearest: Vec<String>,
    },
    #[error("featurization table: {0}")]
    Table(String),
    #[error("binning: {0}")]
    Binning(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("simultaneous group of {size} events exceeds k_max = {k_max}")]
    GroupTooLarge { size: usize, k_max: usize },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("invalid TOML: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

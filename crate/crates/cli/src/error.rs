//! Error-to-exit-code mapping. Every failure path funnels into one of
//! four classes so scripts can branch on the code alone.

use concord::aggregation::AggregationError;
use concord::annotator::AnnotateError;
use concord::datasets::DatasetError;
use concord::effectsize::EvalError;
use concord::jsonl::JsonlError;
use concord::reliability::ReliabilityError;

#[derive(Debug)]
pub enum CliError {
    /// Exit 2: bad config, flags, or invocation.
    Config(String),
    /// Exit 3: malformed or inconsistent input files.
    Input(String),
    /// Exit 4: the annotation backend gave up.
    Backend(String),
    /// Exit 5: the run finished but some annotation runs failed.
    Partial(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Input(_) => 3,
            CliError::Backend(_) => 4,
            CliError::Partial(_) => 5,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m)
            | CliError::Input(m)
            | CliError::Backend(m)
            | CliError::Partial(m) => m,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Input(_) => "input",
            CliError::Backend(_) => "backend",
            CliError::Partial(_) => "partial",
        }
    }
}

impl From<JsonlError> for CliError {
    fn from(e: JsonlError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::BadRatios { .. } => CliError::Config(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::TooFewRepeats { .. } => CliError::Config(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<AnnotateError> for CliError {
    fn from(e: AnnotateError) -> Self {
        match e {
            AnnotateError::BackendUnavailable { .. } => CliError::Backend(e.to_string()),
            AnnotateError::ResumeMismatch { .. } => CliError::Config(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<AggregationError> for CliError {
    fn from(e: AggregationError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ReliabilityError> for CliError {
    fn from(e: ReliabilityError) -> Self {
        CliError::Input(e.to_string())
    }
}

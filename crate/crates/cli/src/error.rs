use bwsl_core::backtest::BacktestError;
use bwsl_core::data::DataError;
use bwsl_core::features::FeatureError;
use bwsl_core::interpret::InterpretError;
use bwsl_core::metrics::MetricsError;
use bwsl_core::policy::PolicyError;
use bwsl_core::trainer::TrainError;
use thiserror::Error;

/// Failure classes, each with its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numeric: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    /// The one-line reason printed to stderr: `error kind=<kind> code=<n>: <message>`.
    pub fn reason_line(&self) -> String {
        let (kind, msg) = match self {
            CliError::Usage(m) => ("usage", m),
            CliError::Data(m) => ("data", m),
            CliError::Numeric(m) => ("numeric", m),
        };
        let flat: String = msg.lines().collect::<Vec<_>>().join(" ");
        format!("error kind={kind} code={}: {flat}", self.code())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Invalid(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::Checkpoint { .. } | PolicyError::Io(_) => CliError::Data(e.to_string()),
            PolicyError::Config(m) => CliError::Usage(m),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => CliError::Usage(m),
            TrainError::Feature(f) => f.into(),
            TrainError::Policy(p) => p.into(),
            TrainError::NoValidStart => CliError::Data(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<BacktestError> for CliError {
    fn from(e: BacktestError) -> Self {
        match e {
            BacktestError::Range { .. } | BacktestError::Feature(_) => CliError::Data(e.to_string()),
            BacktestError::Window => CliError::Usage(e.to_string()),
            BacktestError::Policy(p) => p.into(),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<InterpretError> for CliError {
    fn from(e: InterpretError) -> Self {
        match e {
            InterpretError::EmptyRange(_) | InterpretError::Feature(_) => CliError::Data(e.to_string()),
            InterpretError::Policy(p) => p.into(),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

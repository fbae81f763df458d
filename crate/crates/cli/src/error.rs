use robinf_core::ErrorCategory;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("cannot read input '{path}': {message}")]
    Input { path: String, message: String },

    #[error("parse error at line {line}, column '{column}': {message}")]
    Parse {
        line: u64,
        column: String,
        message: String,
    },

    #[error("no rows left after dropping {dropped} row(s) with missing values")]
    EmptyAfterFiltering { dropped: usize },

    #[error(transparent)]
    Core(#[from] robinf_core::Error),
}

impl CliError {
    /// 2 = configuration, 3 = data, 4 = numeric infeasibility.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Input { .. } | CliError::Parse { .. } | CliError::EmptyAfterFiltering { .. } => 3,
            CliError::Core(e) => match e.category() {
                ErrorCategory::Config => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Numeric => 4,
            },
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Input { .. } => "input_unreadable",
            CliError::Parse { .. } => "parse_error",
            CliError::EmptyAfterFiltering { .. } => "empty_after_filtering",
            CliError::Core(e) => e.code(),
        }
    }

    pub fn hint(&self) -> Option<&'static str> {
        match self {
            CliError::Core(e) => e.hint(),
            CliError::EmptyAfterFiltering { .. } => Some("check the column names and missing-value markers"),
            _ => None,
        }
    }
}

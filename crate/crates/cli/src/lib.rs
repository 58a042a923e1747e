//! Configuration, presets and outputs for the `transtate` command.

pub mod config;
pub mod output;
pub mod run;

pub use config::{parse_config, RawConfig, ResolvedConfig};
pub use run::{execute, run, Formats, RunOutcome, RunSpec};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    #[error("{}: `{key}`: {message}", location(*.line))]
    Parse { line: usize, key: String, message: String },

    #[error("invalid configuration: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error(transparent)]
    Core(#[from] transtate_core::Error),

    #[error("i/o: {0}")]
    Io(String),

    #[error("serialization: {0}")]
    Output(String),
}

fn location(line: usize) -> String {
    if line == 0 {
        "command line".to_string()
    } else {
        format!("line {line}")
    }
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Parse { .. } => "parse",
            CliError::Validation(_) => "validation",
            CliError::Core(_) => "runtime",
            CliError::Io(_) => "io",
            CliError::Output(_) => "output",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Validation(_) => 2,
            CliError::Core(transtate_core::Error::Validation(_)) => 2,
            _ => 1,
        }
    }
}

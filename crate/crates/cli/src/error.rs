// SPDX-License-Identifier: MIT OR Apache-2.0

use thiserror::Error;

/// Errors surfaced by commands, each mapped to a distinct exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("missing {kind} artifact; run `{command}` first")]
    Dependency { kind: &'static str, command: &'static str },

    #[error("artifact store: {0}")]
    Store(String),

    #[error(transparent)]
    Core(#[from] recprobe::Error),

    #[error("server: {0}")]
    Server(String),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Dependency { .. } => "dependency",
            CliError::Store(_) => "store",
            CliError::Server(_) => "server",
            CliError::Core(e) => match e {
                recprobe::Error::Diverged { .. } | recprobe::Error::NonFinite(_) => "training",
                recprobe::Error::Llm(_) | recprobe::Error::Latent { .. } => "llm",
                recprobe::Error::Io { .. } => "io",
                recprobe::Error::Parse { .. } | recprobe::Error::Data(_) | recprobe::Error::Format(_) | recprobe::Error::Json(_) => {
                    "data"
                }
                _ => "invalid",
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 2,
            "dependency" => 3,
            "store" | "io" => 4,
            "data" => 5,
            "training" => 6,
            "llm" => 7,
            "server" => 8,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Store(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Store(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

use std::fmt::Write as _;
use std::path::Path;

use crate::config::ConfigError;
use crate::svg::PlotError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_DEGENERATE: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n{0}")]
    Config(#[from] ConfigError),

    #[error("{context}: {message}")]
    Io { context: String, message: String },

    /// A library error, with where it happened (experiment, method,
    /// replicate, iteration as far as known).
    #[error("{context}: {error}")]
    Runtime {
        context: String,
        error: lfpmc_core::error::Error,
    },

    #[error("plot: {0}")]
    Plot(#[from] PlotError),

    /// The samplers' own call count disagrees with the simulator's counter.
    #[error("simulator accounting mismatch: samplers reported {reported} calls, simulator counted {counted}")]
    Accounting { reported: u64, counted: u64 },
}

impl CliError {
    pub fn io(context: impl Into<String>, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            context: context.into(),
            message: e.to_string(),
        }
    }

    pub fn runtime(context: impl Into<String>, error: lfpmc_core::error::Error) -> Self {
        CliError::Runtime {
            context: context.into(),
            error,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime {
                error: lfpmc_core::error::Error::DegenerateWeights(_),
                ..
            } => EXIT_DEGENERATE,
            _ => EXIT_RUNTIME,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Runtime {
                error: lfpmc_core::error::Error::DegenerateWeights(_),
                ..
            } => "degenerate_weights",
            CliError::Runtime { .. } => "runtime",
            CliError::Plot(_) => "plot",
            CliError::Accounting { .. } => "accounting",
        }
    }

    /// `key=value` lines describing the failure; newlines inside values are
    /// escaped so that every record is one line per key.
    pub fn record(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "status=error");
        let _ = writeln!(out, "kind={}", self.kind());
        let _ = writeln!(out, "exit_code={}", self.exit_code());
        let context = match self {
            CliError::Io { context, .. } | CliError::Runtime { context, .. } => context.as_str(),
            _ => "",
        };
        let _ = writeln!(out, "context={}", escape_value(context));
        let message = match self {
            CliError::Runtime { error, .. } => error.to_string(),
            CliError::Io { message, .. } => message.clone(),
            CliError::Config(e) => e.to_string(),
            CliError::Plot(e) => e.to_string(),
            CliError::Accounting { .. } => self.to_string(),
        };
        let _ = writeln!(out, "message={}", escape_value(&message));
        out
    }

    /// Best effort: the error is also printed, so a failed write is ignored.
    pub fn write_record(&self, dir: &Path) {
        if std::fs::create_dir_all(dir).is_ok() {
            let _ = std::fs::write(dir.join("error.txt"), self.record());
        }
    }
}

pub fn escape_value(v: &str) -> String {
    v.replace('\\', "\\\\").replace('\n', "\\n")
}

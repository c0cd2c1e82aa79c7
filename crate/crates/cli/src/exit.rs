//! Exit codes shared by all binaries.

use std::process::ExitCode;

/// Failure category reported through the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Failure {
    /// Bad arguments or an invalid scenario/schedule file.
    Config,
    /// Reading or writing files, binding sockets.
    Io,
    /// A run that started but could not finish (child crash, missing telemetry).
    Runtime,
    /// Stopped by SIGINT/SIGTERM after flushing partial output.
    Interrupted,
}

impl Failure {
    pub const fn code(self) -> u8 {
        match self {
            Failure::Config => 2,
            Failure::Io => 3,
            Failure::Runtime => 4,
            Failure::Interrupted => 130,
        }
    }
}

impl From<Failure> for ExitCode {
    fn from(f: Failure) -> Self {
        ExitCode::from(f.code())
    }
}

/// Prints `err` prefixed with the program name and returns the exit code.
pub fn fail(program: &str, failure: Failure, err: impl std::fmt::Display) -> ExitCode {
    eprintln!("{program}: {err}");
    failure.into()
}

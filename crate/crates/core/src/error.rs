//! Crate-wide error type with the exit-code taxonomy used by the CLI.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the mathematical domain of an operation
    /// (e.g. `psi(s)` outside the finiteness interval, transient spec
    /// passed to a recurrent-only operation).
    #[error("domain error: {0}")]
    Domain(String),

    /// No zero of psi on the search interval (transient environment).
    #[error("no root: {0}")]
    NoRoot(String),

    /// The node arena would exceed its configured cap.
    #[error("capacity exceeded: {0} nodes (cap {1})")]
    CapacityExceeded(usize, usize),

    /// A walk exceeded its step budget before completing.
    #[error("step budget exceeded: {0} steps")]
    StepBudgetExceeded(u64),

    /// Goldenshluger-Lepski selection got no candidate level with support.
    #[error("empty candidate set: no alpha with R_alpha >= 1")]
    EmptyCandidates,

    /// Malformed configuration file or inconsistent field values.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 0 success, 2 config, 3 capacity or
    /// step budget, 4 empty candidates.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::CapacityExceeded(_, _) | Error::StepBudgetExceeded(_) => 3,
            Error::EmptyCandidates => 4,
            _ => 1,
        }
    }

    /// Short machine-parsable tag emitted on stderr by the CLI.
    pub fn tag(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::NoRoot(_) => "no-root",
            Error::CapacityExceeded(_, _) => "capacity",
            Error::StepBudgetExceeded(_) => "step-budget",
            Error::EmptyCandidates => "empty-candidates",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] sensor_sched::Error),

    /// Scenario or command-line problem; `pointer` is a JSON pointer into
    /// the scenario document when the problem comes from a file.
    #[error("configuration error{}: {msg}", pointer.as_ref().map(|p| format!(" at {p}")).unwrap_or_default())]
    Config { pointer: Option<String>, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl HarnessError {
    pub fn config(msg: impl Into<String>) -> Self {
        HarnessError::Config {
            pointer: None,
            msg: msg.into(),
        }
    }

    pub fn at(pointer: impl Into<String>, msg: impl Into<String>) -> Self {
        HarnessError::Config {
            pointer: Some(pointer.into()),
            msg: msg.into(),
        }
    }

    /// Process exit status: 2 configuration, 3 infeasible, 4 numerical,
    /// 5 size guard.
    pub fn exit_code(&self) -> i32 {
        use sensor_sched::Error as E;
        match self {
            HarnessError::Core(E::Config(_)) => 2,
            HarnessError::Core(E::Infeasible(_)) => 3,
            HarnessError::Core(E::Numerical { .. } | E::NoConvergence { .. }) => 4,
            HarnessError::Core(E::SizeGuard(_)) => 5,
            HarnessError::Config { .. } | HarnessError::Io { .. } | HarnessError::Csv { .. } => 2,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Malformed or inconsistent experiment description.
    #[error("{}", match .line { Some(l) => format!("config error at line {l}: {msg}"), None => format!("config error: {msg}") })]
    Config { line: Option<usize>, msg: String },
    #[error("resource guard: {0}")]
    Resource(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config { line: None, msg: msg.into() }
    }

    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } | Self::Io { .. } => 1,
            Self::Resource(_) => 2,
            Self::Numerical(_) => 3,
        }
    }
}

impl From<dtc_core::Error> for HarnessError {
    fn from(e: dtc_core::Error) -> Self {
        use dtc_core::Error as E;
        match e {
            E::InvalidParameter(m) => Self::config(m),
            E::Resource(m) => Self::Resource(m),
            E::Io(source) => Self::Io { path: PathBuf::new(), source },
            other => Self::Numerical(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

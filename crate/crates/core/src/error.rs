use thiserror::Error;

/// Error taxonomy shared by every module.
///
/// `Domain` marks invalid physical input, `Numerical` a computation that
/// could not be carried out reliably, `Fit` a non-converged or rejected fit.
/// The CLI maps `Domain`/`Parse`/`Io` to exit code 2 and the rest to 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical error in {context}: {diagnostics}")]
    Numerical { context: String, diagnostics: String },

    #[error("fit error in {context}: {message} (residual {residual:.3e})")]
    Fit {
        context: String,
        message: String,
        residual: f64,
    },

    #[error("requested components are unreachable: {0:?}")]
    UnreachableComponents(Vec<String>),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn numerical(context: impl Into<String>, diagnostics: impl Into<String>) -> Self {
        Error::Numerical {
            context: context.into(),
            diagnostics: diagnostics.into(),
        }
    }

    pub fn fit(context: impl Into<String>, message: impl Into<String>, residual: f64) -> Self {
        Error::Fit {
            context: context.into(),
            message: message.into(),
            residual,
        }
    }

    /// Process exit code the CLI uses for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) | Error::Parse(_) | Error::Io(_) => 2,
            Error::Numerical { .. } | Error::Fit { .. } | Error::UnreachableComponents(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

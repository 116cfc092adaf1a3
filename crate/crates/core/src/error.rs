use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error(
        "{what} did not converge after {iterations} iterations \
         ({rows}x{cols}, max|a|={max_abs:.3e}, min/max column norm={norm_ratio:.3e})"
    )]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        rows: usize,
        cols: usize,
        max_abs: f64,
        norm_ratio: f64,
    },

    #[error("ill-conditioned {what}: smallest eigenvalue {min_eig:.3e}; retry with a ridge > 0 (e.g. {suggested_ridge:.3e})")]
    IllConditioned {
        what: &'static str,
        min_eig: f64,
        suggested_ridge: f64,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at step {step} (loss = {loss})")]
    Diverged { step: usize, loss: f64 },

    #[error("degenerate representation: row {row} of {side} has zero norm")]
    DegenerateRepresentation { side: &'static str, row: usize },

    #[error("incompatible schema: {0}")]
    Incompatible(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::NoConvergence { .. }
                | Error::IllConditioned { .. }
                | Error::NonFinite(_)
                | Error::Diverged { .. }
                | Error::DegenerateRepresentation { .. }
        )
    }
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;

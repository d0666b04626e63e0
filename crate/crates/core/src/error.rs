use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CboError>;

#[derive(Debug, Error)]
pub enum CboError {
    /// Malformed input to an operation (shape or dimension mismatch, empty input).
    #[error("input error: {0}")]
    Input(String),

    /// Invalid configuration: unknown names, bad keys, inconsistent sizes.
    #[error("configuration error: {0}")]
    Config(String),

    /// A documented precondition of a formula or experiment does not hold.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// Regression could not be performed on the requested window.
    #[error("fit error: {0}")]
    Fit(String),

    /// Problem size exceeds what an exact method supports.
    #[error("scale error: {0}")]
    Scale(String),

    /// A non-finite value appeared during evaluation or integration.
    #[error("numeric error{}: {message}", context_suffix(.context))]
    Numeric {
        message: String,
        context: Vec<String>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn context_suffix(context: &[String]) -> String {
    if context.is_empty() {
        String::new()
    } else {
        format!(" [{}]", context.join(", "))
    }
}

impl CboError {
    pub fn numeric(message: impl Into<String>) -> Self {
        CboError::Numeric {
            message: message.into(),
            context: Vec::new(),
        }
    }

    /// Attaches a context tag (step index, subsystem, replicate) to numeric errors.
    /// Other variants pass through unchanged.
    pub fn with_context(self, tag: impl Into<String>) -> Self {
        match self {
            CboError::Numeric {
                message,
                mut context,
            } => {
                context.push(tag.into());
                CboError::Numeric { message, context }
            }
            other => other,
        }
    }

    /// Process exit code used by the CLI: 2 for numeric failure, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CboError::Numeric { .. } => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CboError::Io {
            path: path.into(),
            source,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_context_accumulates_in_order() {
        let err = CboError::numeric("particle 3 left the finite range")
            .with_context("step 17")
            .with_context("replicate 2");
        assert_eq!(
            err.to_string(),
            "numeric error [step 17, replicate 2]: particle 3 left the finite range"
        );
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn context_is_ignored_for_non_numeric_errors() {
        let err = CboError::Config("M < J".into()).with_context("step 1");
        assert_eq!(err.to_string(), "configuration error: M < J");
        assert_eq!(err.exit_code(), 1);
    }
}

//! Exit codes: 0 success, 2 input error, 3 empty corpus, 4 invalid config, 5 runtime
//! failure.

use std::fmt;

use elp_core::corpus::CorpusError;
use elp_core::experiments::ExperimentError;

pub const INPUT: u8 = 2;
pub const EMPTY_CORPUS: u8 = 3;
pub const CONFIG: u8 = 4;
pub const RUNTIME: u8 = 5;

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    pub fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }

    pub fn input(error: impl Into<anyhow::Error>) -> Self {
        Self::new(INPUT, error)
    }

    pub fn code(&self) -> u8 {
        self.code
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    /// Runtime failure unless the root cause is an empty corpus.
    fn from(e: E) -> Self {
        let error = e.into();
        let empty = error.chain().any(|c| {
            matches!(c.downcast_ref::<CorpusError>(), Some(CorpusError::EmptyCorpus))
                || matches!(
                    c.downcast_ref::<ExperimentError>(),
                    Some(ExperimentError::Corpus(CorpusError::EmptyCorpus))
                )
                || c.downcast_ref::<elp_core::Error>().is_some_and(elp_core::Error::is_empty_corpus)
        });
        Self {
            code: if empty { EMPTY_CORPUS } else { RUNTIME },
            error,
        }
    }
}

pub fn config_error(message: impl fmt::Display) -> Failure {
    Failure::new(CONFIG, anyhow::anyhow!("invalid config: {message}"))
}

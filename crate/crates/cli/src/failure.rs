use std::fmt;

use pdmp_core::Error;

use crate::config::ConfigError;

/// Exit code 1: the input was rejected. Exit code 2: the run itself failed.
#[derive(Debug, Clone, PartialEq)]
pub enum Failure {
    Invalid(String),
    Runtime(String),
}

impl Failure {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Failure::Invalid(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Failure::Runtime(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Failure::Invalid(_) => "validation",
            Failure::Runtime(_) => "runtime",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Invalid(m) | Failure::Runtime(m) => m,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.kind(), self.message())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

/// Input-shaped core errors count as validation failures.
impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Expr(_)
            | Error::InvalidInput(_)
            | Error::Unsupported(_)
            | Error::ResolutionTooCoarse { .. }
            | Error::DomainProbe { .. }
            | Error::FamilyExplosion { .. } => Failure::Invalid(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

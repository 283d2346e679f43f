use qdyne_core::ambiguity::AmbiguityError;
use qdyne_core::physics::PhysicsError;
use qdyne_core::spectral::SpectralError;
use qdyne_core::trace::TraceError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("insufficient ladder: {0}")]
    InsufficientLadder(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("inconclusive: {0}")]
    Inconclusive(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 0 success, 1 usage/config, 2 data, 3 inconclusive resolution.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::InsufficientLadder(_) => 1,
            CliError::Data(_) | CliError::Io(_) => 2,
            CliError::Inconclusive(_) => 3,
        }
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        match e {
            TraceError::InvalidConfig(_) => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<PhysicsError> for CliError {
    fn from(e: PhysicsError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SpectralError> for CliError {
    fn from(e: SpectralError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<AmbiguityError> for CliError {
    fn from(e: AmbiguityError) -> Self {
        match e {
            AmbiguityError::Inconclusive(_)
            | AmbiguityError::Indistinguishable { .. }
            | AmbiguityError::Unresolved { .. } => CliError::Inconclusive(e.to_string()),
            AmbiguityError::Spectral(s) => s.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config(String::new()).exit_code(), 1);
        assert_eq!(CliError::InsufficientLadder(String::new()).exit_code(), 1);
        assert_eq!(CliError::Data(String::new()).exit_code(), 2);
        assert_eq!(CliError::Inconclusive(String::new()).exit_code(), 3);
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "x");
        assert_eq!(CliError::from(io).exit_code(), 2);
    }

    #[test]
    fn ambiguity_errors_map_by_kind() {
        let e = CliError::from(AmbiguityError::Inconclusive("tie".into()));
        assert_eq!(e.exit_code(), 3);
        let e = CliError::from(AmbiguityError::Spectral(SpectralError::EmptyTrace(0)));
        assert_eq!(e.exit_code(), 2);
    }
}

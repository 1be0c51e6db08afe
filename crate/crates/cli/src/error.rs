use std::path::PathBuf;

use sae_core::area::AreaError;
use sae_core::bootstrap::BootError;
use sae_core::sim::SimError;
use sae_core::unit::UnitError;
use sae_core::{DataError, Error};

pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_FAILURES: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Input(String),
    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("could not serialize output: {0}")]
    Json(#[from] serde_json::Error),
    #[error("could not write CSV: {0}")]
    Csv(#[from] csv::Error),
}

macro_rules! via_core {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(Error::from(e))
            }
        })*
    };
}

via_core!(DataError, AreaError, UnitError, BootError, SimError);

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => core_code(e),
            _ => EXIT_INPUT,
        }
    }
}

fn core_code(e: &Error) -> i32 {
    match e {
        Error::Data(_) => EXIT_INPUT,
        Error::Area(e) => area_code(e),
        Error::Unit(e) => unit_code(e),
        Error::Bootstrap(e) => boot_code(e),
        Error::Numerics(_) => EXIT_NUMERIC,
        Error::Sim(e) => sim_code(e),
    }
}

fn area_code(e: &AreaError) -> i32 {
    match e {
        AreaError::NonFiniteResult
        | AreaError::SingularMatrix
        | AreaError::NonConvergence(_)
        | AreaError::DegenerateDispersion => EXIT_NUMERIC,
        AreaError::InvalidParams(_)
        | AreaError::TooFewAreas { .. }
        | AreaError::RankDeficient
        | AreaError::DimensionMismatch(_) => EXIT_INPUT,
    }
}

fn unit_code(e: &UnitError) -> i32 {
    match e {
        UnitError::ModeSearchFailure { .. }
        | UnitError::NonFiniteResult
        | UnitError::DegenerateWeights { .. }
        | UnitError::NonConvergence(_)
        | UnitError::SingularMatrix => EXIT_NUMERIC,
        UnitError::InvalidParams(_) | UnitError::InvalidConfig(_) | UnitError::DimensionMismatch(_) => EXIT_INPUT,
    }
}

fn boot_code(e: &BootError) -> i32 {
    match e {
        BootError::Area(e) => area_code(e),
        BootError::Unit(e) => unit_code(e),
        BootError::TooManyFailures { .. } => EXIT_FAILURES,
        BootError::ZeroSigma { .. } => EXIT_NUMERIC,
        BootError::MissingSecondStage
        | BootError::UnsupportedSigma(..)
        | BootError::DimensionMismatch(_)
        | BootError::OddLength(_)
        | BootError::InvalidConfig(_) => EXIT_INPUT,
    }
}

fn sim_code(e: &SimError) -> i32 {
    match e {
        SimError::InvalidScenario(_) | SimError::Data(_) | SimError::Output(_) => EXIT_INPUT,
        SimError::Area(e) => area_code(e),
        SimError::Unit(e) => unit_code(e),
        SimError::Bootstrap(e) => boot_code(e),
        SimError::AllRunsFailed(_) => EXIT_NUMERIC,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_follow_error_class() {
        let failures = CliError::from(BootError::TooManyFailures { failed: 9, total: 100 });
        assert_eq!(failures.exit_code(), 3);
        let nested = CliError::from(SimError::Bootstrap(BootError::Area(AreaError::SingularMatrix)));
        assert_eq!(nested.exit_code(), 2);
        assert_eq!(CliError::from(BootError::DimensionMismatch("x".into())).exit_code(), 1);
        assert_eq!(CliError::from(DataError::TooFewAreas(1)).exit_code(), 1);
        assert_eq!(CliError::Input("bad".into()).exit_code(), 1);
    }
}

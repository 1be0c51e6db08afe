//! Monte Carlo studies of the estimators and intervals.

pub mod design;
pub mod scenario;
pub mod study;

pub use scenario::{generate_replicate, DMode, DesignSource, Scenario, SimDraw, SimModel, Skeleton};
pub use study::{run_power, run_reliability, run_study, KindSummary, PowerPoint, RunRecord, SimReport, SimStudy};

use crate::area::AreaError;
use crate::bootstrap::BootError;
use crate::data::DataError;
use crate::unit::UnitError;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Area(#[from] AreaError),
    #[error(transparent)]
    Unit(#[from] UnitError),
    #[error(transparent)]
    Bootstrap(#[from] BootError),
    #[error("all {0} simulation runs failed")]
    AllRunsFailed(usize),
    #[error("could not format output: {0}")]
    Output(String),
}
